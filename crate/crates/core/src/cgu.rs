//! Convolutional gated unit.
//!
//! Refines encoder outputs with whole-sequence context:
//!
//! ```text
//! H ──┬─ conv k=1 ─ReLU────────────────┐
//!     ├─ conv k=3 ─ReLU────────────────┼─ concat ─ conv k=1 ─ReLU─ G
//!     └─ conv k=3 ─ReLU─ conv k=3 ─ReLU┘
//! A = softmax(G·(G·W_attᵀ)ᵀ / √d_h) · G
//! H̃ = H ⊙ σ(A)
//! ```
//!
//! The three-branch layout avoids a k=5 kernel by stacking two k=3 kernels.

use crate::error::{input_err, shape_err, Result};
use crate::layers::{register, EncoderStates, InitKind, ParamSource};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone)]
pub struct ConvParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

impl ConvParams {
    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        prefix: &str,
        k: usize,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        let w = register(store, src, &format!("{prefix}.w"), &[k, d_in, d_out], InitKind::Weight)?;
        let b = register(store, src, &format!("{prefix}.b"), &[d_out], InitKind::Bias)?;
        Ok(ConvParams { w, b })
    }

    fn bind<'p, T: Scalar>(&self, g: &mut Graph<'p, T>, store: &'p ParamStore<T>) -> Result<ConvVars> {
        Ok(ConvVars {
            w: g.param(self.w, store.get(self.w))?,
            b: g.param(self.b, store.get(self.b))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CguParams {
    pub branch1: ConvParams,
    pub branch2: ConvParams,
    pub branch3a: ConvParams,
    pub branch3b: ConvParams,
    pub merge: ConvParams,
    pub w_att: ParamId,
    pub d_h: usize,
    pub d_b: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CguVars {
    pub branch1: ConvVars,
    pub branch2: ConvVars,
    pub branch3a: ConvVars,
    pub branch3b: ConvVars,
    pub merge: ConvVars,
    pub w_att: Var,
}

impl CguParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        prefix: &str,
        d_h: usize,
        d_b: usize,
    ) -> Result<Self> {
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(CguParams {
            branch1: ConvParams::register(store, src, &p("branch1"), 1, d_h, d_b)?,
            branch2: ConvParams::register(store, src, &p("branch2"), 3, d_h, d_b)?,
            branch3a: ConvParams::register(store, src, &p("branch3a"), 3, d_h, d_b)?,
            branch3b: ConvParams::register(store, src, &p("branch3b"), 3, d_b, d_b)?,
            merge: ConvParams::register(store, src, &p("merge"), 1, 3 * d_b, d_h)?,
            w_att: register(store, src, &p("w_att"), &[d_h, d_h], InitKind::Weight)?,
            d_h,
            d_b,
        })
    }

    pub fn bind<'p, T: Scalar>(&self, g: &mut Graph<'p, T>, store: &'p ParamStore<T>) -> Result<CguVars> {
        Ok(CguVars {
            branch1: self.branch1.bind(g, store)?,
            branch2: self.branch2.bind(g, store)?,
            branch3a: self.branch3a.bind(g, store)?,
            branch3b: self.branch3b.bind(g, store)?,
            merge: self.merge.bind(g, store)?,
            w_att: g.param(self.w_att, store.get(self.w_att))?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let convs = [&self.branch1, &self.branch2, &self.branch3a, &self.branch3b, &self.merge];
        let mut ids: Vec<ParamId> = convs.iter().flat_map(|c| [c.w, c.b]).collect();
        ids.push(self.w_att);
        ids
    }
}

/// Zero-padded, length-preserving 1-D convolution with optional ReLU.
pub fn conv1d_same<T: Scalar>(
    g: &mut Graph<'_, T>,
    h: Var,
    conv: &ConvVars,
    activation: Activation,
) -> Result<Var> {
    let y = g.conv1d(h, conv.w, conv.b)?;
    match activation {
        Activation::Relu => g.relu(y),
        Activation::None => Ok(y),
    }
}

/// Three parallel convolution branches, channel-concatenated and merged back
/// to the input width.
pub fn inception_block<T: Scalar>(g: &mut Graph<'_, T>, h: Var, p: &CguVars) -> Result<Var> {
    let b1 = conv1d_same(g, h, &p.branch1, Activation::Relu)?;
    let b2 = conv1d_same(g, h, &p.branch2, Activation::Relu)?;
    let b3 = conv1d_same(g, h, &p.branch3a, Activation::Relu)?;
    let b3 = conv1d_same(g, b3, &p.branch3b, Activation::Relu)?;
    let cat = g.concat(&[b1, b2, b3], 1)?;
    conv1d_same(g, cat, &p.merge, Activation::Relu)
}

/// Scaled dot-product self-attention with `Q = V = G` and `K = G·W_attᵀ`.
/// Keys where `mask` is false receive zero weight.
pub fn self_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    feats: Var,
    w_att: Var,
    mask: &[bool],
) -> Result<Var> {
    let (n, d) = g.value(feats).dims2();
    if mask.len() != n {
        return Err(shape_err!("self_attention: mask of {} for {n} rows", mask.len()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(input_err!("self_attention: every key position is masked"));
    }
    let keys = g.matmul_nt(feats, w_att)?;
    let scores = g.matmul_nt(feats, keys)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = g.masked_softmax(scores, mask)?;
    g.matmul(weights, feats)
}

#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    pub h_tilde: Var,
    pub gate_values: Var,
}

/// `H̃ = H ⊙ σ(g)`.
pub fn gate<T: Scalar>(g: &mut Graph<'_, T>, h: Var, gate_input: Var) -> Result<GateOutput> {
    if g.value(h).shape() != g.value(gate_input).shape() {
        return Err(shape_err!(
            "gate: states {:?} vs gate input {:?}",
            g.value(h).shape(),
            g.value(gate_input).shape()
        ));
    }
    let gate_values = g.sigmoid(gate_input)?;
    let h_tilde = g.mul(h, gate_values)?;
    Ok(GateOutput { h_tilde, gate_values })
}

/// Full unit. With `bypass` the states come back untouched, which reduces
/// the model to plain attention seq2seq.
pub fn cgu_apply<T: Scalar>(
    g: &mut Graph<'_, T>,
    states: &EncoderStates,
    p: &CguVars,
    bypass: bool,
) -> Result<(EncoderStates, Option<GateOutput>)> {
    if bypass {
        return Ok((states.clone(), None));
    }
    let feats = inception_block(g, states.h, p)?;
    let attended = self_attention(g, feats, p.w_att, &states.mask)?;
    let out = gate(g, states.h, attended)?;
    let refined = EncoderStates {
        h: out.h_tilde,
        mask: states.mask.clone(),
    };
    Ok((refined, Some(out)))
}
