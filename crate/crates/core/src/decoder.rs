//! LSTM decoder with bilinear global attention over encoder states.
//!
//! Step `t` (inputs: previous token, previous state `s_{t-1}, C_{t-1}`):
//!
//! ```text
//! e_i   = s_{t-1}ᵀ · W_a · h_i           (masked positions excluded)
//! α     = softmax(e)
//! c_t   = Σ α_i h_i
//! s_t   = LSTM(embed(y_{t-1}), s_{t-1}, C_{t-1})
//! P     = softmax(W_out·[c_t; s_t] + b_out)
//! ```

use crate::error::{input_err, shape_err, Result};
use crate::layers::{
    affine, register, Affine, AffineVars, Embedding, EncoderOutput, EncoderStates, InitKind,
    LstmParams, LstmVars, ParamSource,
};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Var};

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub embed: Embedding,
    pub lstm: LstmParams,
    pub w_a: ParamId,
    pub out: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub embed: Var,
    pub lstm: LstmVars,
    pub w_a: Var,
    pub out: AffineVars,
    pub vocab: usize,
}

impl DecoderParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        vocab: usize,
        emb_dim: usize,
        hidden: usize,
        d_h: usize,
    ) -> Result<Self> {
        Ok(DecoderParams {
            embed: Embedding::register(store, src, "tgt_embed", vocab, emb_dim)?,
            lstm: LstmParams::register(store, src, "dec", emb_dim, hidden)?,
            w_a: register(store, src, "attn.w_a", &[hidden, d_h], InitKind::Weight)?,
            out: Affine::register(store, src, "out", d_h + hidden, vocab)?,
        })
    }

    pub fn bind<'p, T: Scalar>(
        &self,
        g: &mut Graph<'p, T>,
        store: &'p ParamStore<T>,
    ) -> Result<DecoderVars> {
        Ok(DecoderVars {
            embed: g.param(self.embed.table, store.get(self.embed.table))?,
            lstm: self.lstm.bind(g, store)?,
            w_a: g.param(self.w_a, store.get(self.w_a))?,
            out: self.out.bind(g, store)?,
            vocab: self.embed.vocab,
        })
    }
}

/// Decoder hidden `s` and cell `C`, each `1×hidden`.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub s: Var,
    pub c: Var,
}

/// Maps the encoder's final states to the decoder's initial state:
/// `s_0 = tanh(A_h·[→h_n; ←h_1])`, `C_0 = tanh(A_c·[→c_n; ←c_1])`.
#[derive(Debug, Clone)]
pub struct Bridge {
    pub h: Affine,
    pub c: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct BridgeVars {
    pub h: AffineVars,
    pub c: AffineVars,
}

impl Bridge {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        enc_hidden: usize,
        dec_hidden: usize,
    ) -> Result<Self> {
        Ok(Bridge {
            h: Affine::register(store, src, "bridge_h", 2 * enc_hidden, dec_hidden)?,
            c: Affine::register(store, src, "bridge_c", 2 * enc_hidden, dec_hidden)?,
        })
    }

    pub fn bind<'p, T: Scalar>(&self, g: &mut Graph<'p, T>, store: &'p ParamStore<T>) -> Result<BridgeVars> {
        Ok(BridgeVars {
            h: self.h.bind(g, store)?,
            c: self.c.bind(g, store)?,
        })
    }
}

pub fn initial_state<T: Scalar>(
    g: &mut Graph<'_, T>,
    enc: &EncoderOutput,
    p: &BridgeVars,
) -> Result<DecoderState> {
    let hs = g.concat(&[enc.fwd_final.0, enc.bwd_final.0], 1)?;
    let cs = g.concat(&[enc.fwd_final.1, enc.bwd_final.1], 1)?;
    let s = affine(g, hs, &p.h)?;
    let s = g.tanh(s)?;
    let c = affine(g, cs, &p.c)?;
    let c = g.tanh(c)?;
    Ok(DecoderState { s, c })
}

/// `α = softmax(s_prevᵀ·W_a·H)` over unmasked rows of `H`; `1×n`.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<'_, T>,
    s_prev: Var,
    enc: &EncoderStates,
    w_a: Var,
) -> Result<Var> {
    if !enc.mask.iter().any(|&m| m) {
        return Err(input_err!("attention over encoder states with every row masked"));
    }
    let query = g.matmul(s_prev, w_a)?;
    let scores = g.matmul_nt(query, enc.h)?;
    g.masked_softmax(scores, &enc.mask)
}

/// `c = Σ α_i h_i`; `1×d_h`.
pub fn context_vector<T: Scalar>(g: &mut Graph<'_, T>, alpha: Var, h: Var) -> Result<Var> {
    let n = g.value(h).rows();
    if g.value(alpha).shape() != [1, n] {
        return Err(shape_err!(
            "context_vector: weights {:?} for {n} encoder rows",
            g.value(alpha).shape()
        ));
    }
    g.matmul(alpha, h)
}

/// Decoder step output before the vocabulary projection.
#[derive(Debug, Clone, Copy)]
pub struct StepFeatures {
    /// `[c_t; s_t]`, the input to the output layer.
    pub features: Var,
    pub state: DecoderState,
    pub alpha: Var,
}

pub fn decode_step_features<T: Scalar>(
    g: &mut Graph<'_, T>,
    y_prev: usize,
    state: DecoderState,
    enc: &EncoderStates,
    p: &DecoderVars,
) -> Result<StepFeatures> {
    if y_prev >= p.vocab {
        return Err(input_err!("token id {y_prev} outside target vocabulary of {}", p.vocab));
    }
    let emb = g.embedding(p.embed, &[y_prev])?;
    let (s, c) = crate::layers::lstm_cell(g, emb, state.s, state.c, &p.lstm)?;
    let alpha = attention_weights(g, state.s, enc, p.w_a)?;
    let ctx = context_vector(g, alpha, enc.h)?;
    let features = g.concat(&[ctx, s], 1)?;
    Ok(StepFeatures {
        features,
        state: DecoderState { s, c },
        alpha,
    })
}

/// One decoder step up to the `1×|Y|` output logits.
pub fn decode_step_logits<T: Scalar>(
    g: &mut Graph<'_, T>,
    y_prev: usize,
    state: DecoderState,
    enc: &EncoderStates,
    p: &DecoderVars,
) -> Result<(Var, StepFeatures)> {
    let step = decode_step_features(g, y_prev, state, enc, p)?;
    let logits = affine(g, step.features, &p.out)?;
    Ok((logits, step))
}

/// One decoder step; returns `(P_vocab, next state, α)`.
pub fn decode_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    y_prev: usize,
    state: DecoderState,
    enc: &EncoderStates,
    p: &DecoderVars,
) -> Result<(Var, DecoderState, Var)> {
    let (logits, step) = decode_step_logits(g, y_prev, state, enc, p)?;
    let probs = g.softmax(logits, 1)?;
    Ok((probs, step.state, step.alpha))
}
