//! Mini-batch training: elementwise gradient clipping, Adam with bias
//! correction, and a learning rate halved after every epoch.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Batch, EncodedPair};
use crate::error::{config_err, input_err, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{GradAccumulator, ParamStore, Scalar, Tensor};

pub const ADAM_ALPHA: f64 = 0.001;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const CLIP_LO: f64 = -10.0;
pub const CLIP_HI: f64 = 10.0;
pub const BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub halve_lr_each_epoch: bool,
    /// Stop halving after this many epochs; `None` halves every epoch.
    pub halving_epochs: Option<usize>,
    pub seed: u64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: BATCH_SIZE,
            epochs: 10,
            lr: ADAM_ALPHA,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            clip_lo: CLIP_LO,
            clip_hi: CLIP_HI,
            halve_lr_each_epoch: true,
            halving_epochs: None,
            seed: 1,
            max_src_len: 100,
            max_tgt_len: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if !(self.clip_lo < self.clip_hi) {
            return Err(config_err!("clip range [{}, {}] is empty", self.clip_lo, self.clip_hi));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err!("Adam eps must be positive"));
        }
        if self.max_src_len == 0 || self.max_tgt_len == 0 {
            return Err(config_err!("length limits must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.lr;
        for e in 1..epoch {
            if self.halves_after(e) {
                lr = end_of_epoch(lr);
            }
        }
        lr
    }

    fn halves_after(&self, epoch: usize) -> bool {
        self.halve_lr_each_epoch && self.halving_epochs.map_or(true, |k| epoch <= k)
    }
}

pub fn end_of_epoch(lr: f64) -> f64 {
    lr / 2.0
}

/// Clamps every gradient entry into `[lo, hi]`. NaN entries are an error
/// naming the parameter.
pub fn clip_gradients<T: Scalar>(
    store: &ParamStore<T>,
    grads: &mut GradAccumulator<T>,
    lo: f64,
    hi: f64,
) -> Result<()> {
    for id in store.ids() {
        clip_tensor(grads.get_mut(id), lo, hi)
            .map_err(|_| Error::Numeric(format!("NaN gradient for parameter {}", store.name(id))))?;
    }
    Ok(())
}

pub fn clip_tensor<T: Scalar>(t: &mut Tensor<T>, lo: f64, hi: f64) -> Result<()> {
    let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
    for x in t.data_mut() {
        if x.is_nan() {
            return Err(Error::Numeric("NaN gradient".into()));
        }
        *x = x.max(lo).min(hi);
    }
    Ok(())
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, alpha: f64) -> Self {
        Self::with_hyper(store, alpha, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }

    pub fn with_hyper(store: &ParamStore<T>, alpha: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            alpha,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One Adam update with bias correction:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `p ← p − α·m̂ / (√v̂ + ε)`.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &GradAccumulator<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(config_err!("optimizer state does not match the parameter set"));
    }
    state.t = state
        .t
        .checked_add(1)
        .ok_or_else(|| config_err!("Adam step counter overflow"))?;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let bc1 = T::from_f64(1.0 - state.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - state.beta2.powi(t));
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let (one, alpha, eps) = (T::one(), T::from_f64(state.alpha), T::from_f64(state.eps));
    for id in store.ids() {
        let g = grads.get(id).data();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sequence loss over the epoch's batches.
    pub train_loss: f64,
    pub seconds: f64,
}

pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    pub log: Vec<EpochLog>,
}

/// Trains a freshly initialized model. Shuffling, initialization and batch
/// order depend only on the seeds in the configs. `on_epoch` runs after
/// every epoch with that epoch's log line and checkpoint.
pub fn train<T: Scalar>(
    data: &[EncodedPair],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &mut Checkpoint<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(input_err!("training corpus is empty"));
    }
    let mut model = Model::<T>::new(model_cfg)?;
    let mut adam = AdamState::with_hyper(&model.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        adam.alpha = lr;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<&EncodedPair> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = Batch::new(&pairs, cfg.max_src_len, cfg.max_tgt_len)?;
            let (out, mut grads) = model.loss_and_grad(&batch)?;
            clip_gradients(&model.store, &mut grads, cfg.clip_lo, cfg.clip_hi)?;
            adam_step(&mut model.store, &grads, &mut adam)?;
            loss_sum += out.loss.as_f64() * batch.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / data.len() as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        let mut ck = Checkpoint::from_model(&model, epoch as u32, lr, Some(adam.clone()));
        on_epoch(&entry, &mut ck)?;
        log.push(entry);
        if cfg.halves_after(epoch) {
            lr = end_of_epoch(lr);
        }
    }
    Ok(TrainOutcome { model, adam, log })
}
