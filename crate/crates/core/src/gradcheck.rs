//! Full-model finite-difference gradient check in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, EncodedPair, RESERVED};
use crate::error::{config_err, Result};
use crate::model::{Model, ModelConfig};

pub const FD_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const MAX_DIMS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Embedding size and hidden size.
    pub dims: usize,
    /// Source and target vocabulary size, reserved ids included.
    pub vocab: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub pairs: usize,
    pub seed: u64,
    pub cgu_enabled: bool,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            dims: 4,
            vocab: 12,
            src_len: 5,
            tgt_len: 4,
            pairs: 2,
            seed: 7,
            cgu_enabled: true,
            eps: FD_EPS,
            tolerance: TOLERANCE,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.dims > MAX_DIMS {
            return Err(config_err!("gradcheck dims must be in 1..={MAX_DIMS}, got {}", self.dims));
        }
        if self.vocab <= RESERVED.len() {
            return Err(config_err!("gradcheck vocab must exceed the {} reserved ids", RESERVED.len()));
        }
        if self.src_len == 0 || self.tgt_len == 0 || self.pairs == 0 {
            return Err(config_err!("gradcheck lengths and pair count must be positive"));
        }
        if !(self.eps > 0.0 && self.tolerance > 0.0) {
            return Err(config_err!("gradcheck eps and tolerance must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut c = ModelConfig::tiny(self.vocab, self.vocab, self.dims, self.seed);
        c.cgu_enabled = self.cgu_enabled;
        c
    }

    /// Random pairs drawn from the non-reserved ids.
    pub fn random_pairs(&self) -> Vec<EncodedPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let lo = RESERVED.len();
        (0..self.pairs)
            .map(|_| EncodedPair {
                src: (0..self.src_len).map(|_| rng.gen_range(lo..self.vocab)).collect(),
                tgt: (0..self.tgt_len).map(|_| rng.gen_range(lo..self.vocab)).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    /// Largest `|analytic − numeric| / max(1, |analytic|)` over the entries.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares the analytic gradient of the batch loss against central
/// differences for every parameter entry. `corrupt` names a parameter
/// whose analytic gradient is shifted by 1 before comparison (a test hook
/// for the failure path).
pub fn check_model(
    model: &mut Model<f64>,
    batch: &Batch,
    eps: f64,
    tolerance: f64,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    let (_, mut grads) = model.loss_and_grad(batch)?;
    if let Some(name) = corrupt {
        let id = model
            .store
            .id(name)
            .ok_or_else(|| config_err!("no parameter named {name}"))?;
        for g in grads.get_mut(id).data_mut() {
            *g += 1.0;
        }
    }
    let ids: Vec<_> = model.store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = grads.get(id).data().to_vec();
        let mut worst = (0.0f64, 0usize);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.store.get(id).data()[i];
            model.store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = model.forward_loss(batch)?.loss;
            model.store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = model.forward_loss(batch)?.loss;
            model.store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            if err > worst.0 || err.is_nan() {
                worst = (err, i);
            }
        }
        params.push(ParamCheck {
            name: model.store.name(id).to_string(),
            entries: analytic.len(),
            max_rel_err: worst.0,
            worst_index: worst.1,
            passed: worst.0 < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, params })
}

/// Builds the configured random model and batch and checks them.
pub fn run(cfg: &GradCheckConfig, corrupt: Option<&str>) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut model = Model::<f64>::new(cfg.model_config())?;
    let pairs = cfg.random_pairs();
    let refs: Vec<&EncodedPair> = pairs.iter().collect();
    let batch = Batch::new(&refs, cfg.src_len, cfg.tgt_len)?;
    check_model(&mut model, &batch, cfg.eps, cfg.tolerance, corrupt)
}
