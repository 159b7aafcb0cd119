//! End-to-end model: embeddings, BiLSTM encoder, CGU, attention decoder and
//! the teacher-forced negative log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgu::{cgu_apply, CguParams, CguVars};
use crate::data::Batch;
use crate::decoder::{
    decode_step_features, initial_state, Bridge, BridgeVars, DecoderParams, DecoderState, DecoderVars,
};
use crate::error::{config_err, input_err, Result};
use crate::layers::{bilstm_encode, Embedding, EncoderStates, Initializer, LstmParams, LstmVars, ParamSource};
use crate::tensor::{GradAccumulator, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

fn default_max_tgt_len() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub cgu_enabled: bool,
    /// Width of each CGU convolution branch.
    pub d_b: usize,
    pub seed: u64,
    /// Longest target (without BOS/EOS) accepted by the loss.
    #[serde(default = "default_max_tgt_len")]
    pub max_tgt_len: usize,
}

impl ModelConfig {
    /// Word embedding and hidden sizes of 512, CGU on, branch width d_h/2.
    pub fn full_size(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        ModelConfig {
            src_vocab_size,
            tgt_vocab_size,
            emb_dim: 512,
            hidden: 512,
            cgu_enabled: true,
            d_b: 512,
            seed: 1,
            max_tgt_len: default_max_tgt_len(),
        }
    }

    /// Small config with `d_b = hidden` (i.e. d_h / 2).
    pub fn tiny(src_vocab_size: usize, tgt_vocab_size: usize, dim: usize, seed: u64) -> Self {
        ModelConfig {
            src_vocab_size,
            tgt_vocab_size,
            emb_dim: dim,
            hidden: dim,
            cgu_enabled: true,
            d_b: dim,
            seed,
            max_tgt_len: default_max_tgt_len(),
        }
    }

    /// Encoder output width, `2·hidden`.
    pub fn d_h(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("emb_dim", self.emb_dim),
            ("hidden", self.hidden),
            ("d_b", self.d_b),
            ("max_tgt_len", self.max_tgt_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(config_err!("{name} must be at least 1"));
            }
        }
        if self.tgt_vocab_size <= crate::data::EOS {
            return Err(config_err!("tgt_vocab_size must cover the reserved ids"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub src_embed: Embedding,
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub bridge: Bridge,
    pub cgu: CguParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub src_embed: Var,
    pub enc_fwd: LstmVars,
    pub enc_bwd: LstmVars,
    pub bridge: BridgeVars,
    pub cgu: CguVars,
    pub decoder: DecoderVars,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub params: ModelParams,
}

/// Output of [`Model::forward_loss`].
#[derive(Debug, Clone)]
pub struct LossOutput<T: Scalar> {
    /// `(1/N)·Σ_n Σ_t −log P(y_t)`.
    pub loss: T,
    /// `N × (m_max − 1)`; entry `(n, t)` is `−log P(y_{t+1})`, zero past the
    /// row's own length.
    pub per_token_nll: Tensor<T>,
    /// Number of predicted (non-padding) target tokens.
    pub tokens: usize,
}

impl<T: Scalar> LossOutput<T> {
    pub fn mean_token_nll(&self) -> f64 {
        self.per_token_nll.data().iter().map(|x| x.as_f64()).sum::<f64>() / self.tokens as f64
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut init = Initializer::new(config.seed);
        Self::build(config, &mut init)
    }

    /// Assembles a model, drawing every parameter from `src` in a fixed order.
    pub fn build(config: ModelConfig, src: &mut dyn ParamSource<T>) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let src_embed = Embedding::register(&mut store, src, "src_embed", c.src_vocab_size, c.emb_dim)?;
        let enc_fwd = LstmParams::register(&mut store, src, "enc_fwd", c.emb_dim, c.hidden)?;
        let enc_bwd = LstmParams::register(&mut store, src, "enc_bwd", c.emb_dim, c.hidden)?;
        let bridge = Bridge::register(&mut store, src, c.hidden, c.hidden)?;
        let cgu = CguParams::register(&mut store, src, "cgu", c.d_h(), c.d_b)?;
        let decoder =
            DecoderParams::register(&mut store, src, c.tgt_vocab_size, c.emb_dim, c.hidden, c.d_h())?;
        Ok(Model {
            config,
            store,
            params: ModelParams { src_embed, enc_fwd, enc_bwd, bridge, cgu, decoder },
        })
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p, T>) -> Result<ModelVars> {
        let p = &self.params;
        Ok(ModelVars {
            src_embed: g.param(p.src_embed.table, self.store.get(p.src_embed.table))?,
            enc_fwd: p.enc_fwd.bind(g, &self.store)?,
            enc_bwd: p.enc_bwd.bind(g, &self.store)?,
            bridge: p.bridge.bind(g, &self.store)?,
            cgu: p.cgu.bind(g, &self.store)?,
            decoder: p.decoder.bind(g, &self.store)?,
        })
    }

    /// Encodes a source and returns the (refined) encoder states together
    /// with the decoder's initial state.
    pub fn encode(
        &self,
        g: &mut Graph<'_, T>,
        vars: &ModelVars,
        src: &[usize],
    ) -> Result<(EncoderStates, DecoderState)> {
        if let Some(&bad) = src.iter().find(|&&id| id >= self.config.src_vocab_size) {
            return Err(input_err!("source id {bad} outside vocabulary of {}", self.config.src_vocab_size));
        }
        let enc = bilstm_encode(g, src, vars.src_embed, &vars.enc_fwd, &vars.enc_bwd)?;
        let state = initial_state(g, &enc, &vars.bridge)?;
        let (states, _) = cgu_apply(g, &enc.states, &vars.cgu, !self.config.cgu_enabled)?;
        Ok((states, state))
    }

    /// Teacher-forced loss of one sequence: `tgt` is `BOS y_1 … y_m EOS`.
    /// Returns the summed NLL node and the per-step NLL values.
    pub fn sequence_loss(
        &self,
        g: &mut Graph<'_, T>,
        vars: &ModelVars,
        src: &[usize],
        tgt: &[usize],
    ) -> Result<(Var, Vec<T>)> {
        if tgt.len() < 2 {
            return Err(input_err!("target must hold at least BOS and EOS"));
        }
        if tgt.len() - 2 > self.config.max_tgt_len {
            return Err(input_err!(
                "target of {} tokens exceeds the configured maximum {}",
                tgt.len() - 2,
                self.config.max_tgt_len
            ));
        }
        let (enc, mut state) = self.encode(g, vars, src)?;
        let mut feats = Vec::with_capacity(tgt.len() - 1);
        for &y_prev in &tgt[..tgt.len() - 1] {
            let step = decode_step_features(g, y_prev, state, &enc, &vars.decoder)?;
            feats.push(step.features);
            state = step.state;
        }
        // one output projection for all steps; rows are bitwise equal to
        // per-step projections
        let feats = g.concat(&feats, 0)?;
        let logits = crate::layers::affine(g, feats, &vars.decoder.out)?;
        let logp = g.log_softmax(logits)?;
        let gold = g.pick(logp, &tgt[1..])?;
        let nll: Vec<T> = g.value(gold).data().iter().map(|&x| -x).collect();
        let total = g.sum(gold)?;
        let loss = g.scale(total, -1.0)?;
        Ok((loss, nll))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(input_err!("empty batch"));
        }
        Ok(())
    }

    fn assemble(&self, batch: &Batch, per_seq: &[(T, Vec<T>)]) -> Result<LossOutput<T>> {
        let steps = batch.tgt.iter().map(Vec::len).max().unwrap_or(2) - 1;
        let mut nll = Tensor::zeros(&[batch.len(), steps]);
        let mut sum = T::zero();
        for (i, (l, row)) in per_seq.iter().enumerate() {
            sum = sum + *l;
            nll.data_mut()[i * steps..i * steps + row.len()].copy_from_slice(row);
        }
        Ok(LossOutput {
            loss: sum / T::from_f64(batch.len() as f64),
            per_token_nll: nll,
            tokens: batch.predicted_tokens(),
        })
    }

    /// Batch loss without gradients.
    pub fn forward_loss(&self, batch: &Batch) -> Result<LossOutput<T>> {
        self.check_batch(batch)?;
        let per_seq: Vec<(T, Vec<T>)> = (0..batch.len())
            .into_par_iter()
            .map(|i| {
                let mut g = Graph::new();
                let vars = self.bind(&mut g)?;
                let (loss, nll) = self.sequence_loss(&mut g, &vars, batch.src_row(i), batch.tgt_row(i))?;
                Ok((g.value(loss).item(), nll))
            })
            .collect::<Result<_>>()?;
        self.assemble(batch, &per_seq)
    }

    /// Batch loss and its gradient with respect to every parameter.
    ///
    /// Each sequence runs on its own graph (possibly in parallel); per-
    /// sequence gradients are summed in sequence order and scaled by `1/N`.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(LossOutput<T>, GradAccumulator<T>)> {
        self.check_batch(batch)?;
        let results: Vec<_> = (0..batch.len())
            .into_par_iter()
            .map(|i| {
                let mut g = Graph::new();
                let vars = self.bind(&mut g)?;
                let (loss, nll) = self.sequence_loss(&mut g, &vars, batch.src_row(i), batch.tgt_row(i))?;
                let grads = g.backward(loss)?;
                Ok(((g.value(loss).item(), nll), grads))
            })
            .collect::<Result<_>>()?;
        let mut acc = GradAccumulator::zeros_like(&self.store);
        let mut per_seq = Vec::with_capacity(results.len());
        for (vals, grads) in results {
            acc.add(&grads);
            per_seq.push(vals);
        }
        acc.scale(T::one() / T::from_f64(batch.len() as f64));
        Ok((self.assemble(batch, &per_seq)?, acc))
    }

    pub fn cgu_param_ids(&self) -> Vec<ParamId> {
        self.params.cgu.ids()
    }

    /// Redraws the parameters whose names start with `prefix` from a fresh
    /// stream seeded with `seed`.
    pub fn reinit_prefix(&mut self, prefix: &str, seed: u64) {
        let mut init = Initializer::new(seed);
        let ids: Vec<ParamId> = self.store.ids().filter(|&id| self.store.name(id).starts_with(prefix)).collect();
        for id in ids {
            let shape = self.store.get(id).shape().to_vec();
            *self.store.get_mut(id) = init.weight(&shape);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EncodedPair, BOS, EOS};

    #[test]
    fn parameter_names_are_unique_and_complete() {
        let m = Model::<f64>::new(ModelConfig::tiny(9, 7, 3, 1)).unwrap();
        let names: Vec<&str> = m.store.iter().map(|(_, n, _)| n).collect();
        for expected in ["src_embed", "enc_fwd.w_x", "cgu.w_att", "attn.w_a", "out.w", "bridge_c.b"] {
            assert!(names.contains(&expected), "{expected} missing");
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn overlong_target_is_an_input_error() {
        let mut cfg = ModelConfig::tiny(9, 7, 3, 1);
        cfg.max_tgt_len = 2;
        let m = Model::<f64>::new(cfg).unwrap();
        let p = EncodedPair { src: vec![4, 5], tgt: vec![4, 5, 6] };
        let batch = Batch::new(&[&p], 10, 10).unwrap();
        assert!(matches!(m.forward_loss(&batch), Err(crate::Error::Input(_))));
        let ok = EncodedPair { src: vec![4], tgt: vec![4, 5] };
        let batch = Batch::new(&[&ok], 10, 10).unwrap();
        assert_eq!(batch.tgt[0], vec![BOS, 4, 5, EOS]);
        m.forward_loss(&batch).unwrap();
    }

    #[test]
    fn zero_dims_are_rejected() {
        let mut cfg = ModelConfig::tiny(9, 7, 3, 1);
        cfg.hidden = 0;
        assert!(matches!(Model::<f32>::new(cfg), Err(crate::Error::Config(_))));
    }
}
