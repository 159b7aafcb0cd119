//! Embedding, LSTM cell, bidirectional LSTM encoder and affine maps.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{input_err, shape_err, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Source of initial parameter values: uniform(-0.1, 0.1) weights, zero
/// biases, drawn in registration order from a seeded stream.
pub struct Initializer {
    rng: ChaCha8Rng,
    dist: Uniform<f64>,
    random_bias: bool,
}

impl Initializer {
    pub const RANGE: f64 = 0.1;

    pub fn new(seed: u64) -> Self {
        Self::with_range(seed, Self::RANGE, false)
    }

    /// Weights from uniform(−range, range); biases from the same law when
    /// `random_bias` is set, zero otherwise.
    pub fn with_range(seed: u64, range: f64, random_bias: bool) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dist: Uniform::new_inclusive(-range, range),
            random_bias,
        }
    }

    pub fn weight<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(self.dist.sample(&mut self.rng))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches buffer")
    }

    pub fn bias<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        if self.random_bias {
            self.weight(shape)
        } else {
            Tensor::zeros(shape)
        }
    }
}

/// How a parameter tensor gets its initial value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Weight,
    Bias,
}

/// Registers parameters into a store. Abstracts over fresh initialization
/// and loading named tensors from a checkpoint.
pub trait ParamSource<T: Scalar> {
    fn take(&mut self, name: &str, shape: &[usize], kind: InitKind) -> Result<Tensor<T>>;
}

impl<T: Scalar> ParamSource<T> for Initializer {
    fn take(&mut self, _name: &str, shape: &[usize], kind: InitKind) -> Result<Tensor<T>> {
        Ok(match kind {
            InitKind::Weight => self.weight(shape),
            InitKind::Bias => self.bias(shape),
        })
    }
}

pub(crate) fn register<T: Scalar>(
    store: &mut ParamStore<T>,
    src: &mut dyn ParamSource<T>,
    name: &str,
    shape: &[usize],
    kind: InitKind,
) -> Result<ParamId> {
    let t = src.take(name, shape, kind)?;
    if t.shape() != shape {
        return Err(shape_err!("parameter {name}: expected {shape:?}, got {:?}", t.shape()));
    }
    store.add(name, t)
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Result<Self> {
        let table = register(store, src, name, &[vocab, dim], InitKind::Weight)?;
        Ok(Embedding { table, vocab, dim })
    }
}

/// `y = x·Wᵀ + b` with `W` stored as `out×in`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AffineVars {
    pub w: Var,
    pub b: Var,
}

impl Affine {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        prefix: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let w = register(store, src, &format!("{prefix}.w"), &[output, input], InitKind::Weight)?;
        let b = register(store, src, &format!("{prefix}.b"), &[output], InitKind::Bias)?;
        Ok(Affine { w, b })
    }

    pub fn bind<'p, T: Scalar>(
        &self,
        g: &mut Graph<'p, T>,
        store: &'p ParamStore<T>,
    ) -> Result<AffineVars> {
        Ok(AffineVars {
            w: g.param(self.w, store.get(self.w))?,
            b: g.param(self.b, store.get(self.b))?,
        })
    }
}

pub fn affine<T: Scalar>(g: &mut Graph<'_, T>, x: Var, p: &AffineVars) -> Result<Var> {
    let y = g.matmul_nt(x, p.w)?;
    g.add_row(y, p.b)
}

/// LSTM weights. Gate blocks are stacked in the order
/// `[input, forget, candidate, output]` along the first axis.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        src: &mut dyn ParamSource<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let g4 = 4 * hidden;
        let w_x = register(store, src, &format!("{prefix}.w_x"), &[g4, input], InitKind::Weight)?;
        let w_h = register(store, src, &format!("{prefix}.w_h"), &[g4, hidden], InitKind::Weight)?;
        let b = register(store, src, &format!("{prefix}.b"), &[g4], InitKind::Bias)?;
        Ok(LstmParams { w_x, w_h, b, input, hidden })
    }

    pub fn bind<'p, T: Scalar>(
        &self,
        g: &mut Graph<'p, T>,
        store: &'p ParamStore<T>,
    ) -> Result<LstmVars> {
        Ok(LstmVars {
            w_x: g.param(self.w_x, store.get(self.w_x))?,
            w_h: g.param(self.w_h, store.get(self.w_h))?,
            b: g.param(self.b, store.get(self.b))?,
            hidden: self.hidden,
        })
    }
}

/// One LSTM step on a `1×input` row; returns `(h, c)`, each `1×hidden`.
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let x_proj = g.matmul_nt(x, p.w_x)?;
    lstm_cell_projected(g, x_proj, h_prev, c_prev, p)
}

/// LSTM step given the input projection `x·W_xᵀ` already computed.
pub(crate) fn lstm_cell_projected<T: Scalar>(
    g: &mut Graph<'_, T>,
    x_proj: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let hid = p.hidden;
    for (v, what) in [(h_prev, "h_prev"), (c_prev, "c_prev")] {
        if g.value(v).shape() != [1, hid] {
            return Err(shape_err!("lstm_cell: {what} {:?}, hidden {hid}", g.value(v).shape()));
        }
    }
    let h_proj = g.matmul_nt(h_prev, p.w_h)?;
    let pre = g.add(x_proj, h_proj)?;
    let pre = g.add_row(pre, p.b)?;
    let i = g.slice(pre, 1, 0, hid)?;
    let f = g.slice(pre, 1, hid, hid)?;
    let cand = g.slice(pre, 1, 2 * hid, hid)?;
    let o = g.slice(pre, 1, 3 * hid, hid)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c)?;
    let h = g.mul(o, c_act)?;
    Ok((h, c))
}

/// Per-token encoder outputs `H` (`n×2·hidden`) and the padding mask
/// (`true` marks a real token).
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub h: Var,
    pub mask: Vec<bool>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub states: EncoderStates,
    /// `(h, c)` after the last token, forward direction.
    pub fwd_final: (Var, Var),
    /// `(h, c)` after the first token, backward direction.
    pub bwd_final: (Var, Var),
}

fn zeros_row<T: Scalar>(g: &mut Graph<'_, T>, n: usize) -> Result<Var> {
    g.input(Tensor::zeros(&[1, n]))
}

fn run_direction<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    p: &LstmVars,
    order: impl Iterator<Item = usize>,
    n: usize,
) -> Result<(Vec<Var>, (Var, Var))> {
    let proj = g.matmul_nt(x, p.w_x)?;
    let mut h = zeros_row(g, p.hidden)?;
    let mut c = zeros_row(g, p.hidden)?;
    let mut outs = vec![None; n];
    for t in order {
        let xt = g.slice(proj, 0, t, 1)?;
        (h, c) = lstm_cell_projected(g, xt, h, c, p)?;
        outs[t] = Some(h);
    }
    Ok((outs.into_iter().map(|v| v.expect("every position visited")).collect(), (h, c)))
}

/// Runs forward and backward LSTMs over `src_ids` from zero initial states
/// and concatenates their outputs per position.
pub fn bilstm_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    src_ids: &[usize],
    embed: Var,
    fwd: &LstmVars,
    bwd: &LstmVars,
) -> Result<EncoderOutput> {
    let n = src_ids.len();
    if n == 0 {
        return Err(input_err!("cannot encode an empty source sequence"));
    }
    let x = g.embedding(embed, src_ids)?;
    let (f_rows, fwd_final) = run_direction(g, x, fwd, 0..n, n)?;
    let (b_rows, bwd_final) = run_direction(g, x, bwd, (0..n).rev(), n)?;
    let f = g.concat(&f_rows, 0)?;
    let b = g.concat(&b_rows, 0)?;
    let h = g.concat(&[f, b], 1)?;
    Ok(EncoderOutput {
        states: EncoderStates { h, mask: vec![true; n] },
        fwd_final,
        bwd_final,
    })
}
