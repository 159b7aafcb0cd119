use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels;
use super::params::{Gradients, ParamGrad, ParamId};
use super::{sigmoid, Scalar, Tensor};
use crate::error::{config_err, input_err, shape_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var },
    LogSoftmax(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Conv1d { x: Var, w: Var, b: Var },
    SumAll(Var),
    Pick { x: Var, cols: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(..) => "transpose",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Embedding { .. } => "embedding",
            Op::Conv1d { .. } => "conv1d",
            Op::SumAll(..) => "sum",
            Op::Pick { .. } => "pick",
        }
    }
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op,
}

/// Append-only tape of tensor operations.
///
/// Node ids are assigned in creation order, so inputs always precede the
/// nodes that consume them. Parameters are borrowed, not copied.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, len, inner)` view of `shape` around `axis`.
fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mat_dims<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(shape_err!("{what}: expected a matrix, got shape {:?}", t.shape()));
    }
    Ok(t.dims2())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {} (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; it receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter into the graph by reference.
    pub fn param(&mut self, id: ParamId, value: &'p Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("parameter {} is not finite", id.0)));
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param(id),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err!("add: {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b))
    }

    /// Adds a bias vector (`d` elements) to every row of an `n×d` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let (n, d) = mat_dims(x, "add_row")?;
        if b.numel() != d {
            return Err(shape_err!("add_row: bias {:?} for {n}x{d}", b.shape()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        let t = Tensor::new(vec![n, d], data)?;
        self.push(t, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err!("mul: {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let t = self.value(a).map(|x| x * f);
        self.push(t, Op::Scale(a, factor))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = mat_dims(self.value(a), "matmul lhs")?;
        let (k2, n) = mat_dims(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(shape_err!("matmul: {m}x{k} · {k2}x{n}"));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b))
    }

    /// `a[m×k] · b[n×k]ᵀ`; applies a weight matrix stored as `out×in` to
    /// every row of `a`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = mat_dims(self.value(a), "matmul_nt lhs")?;
        let (n, k2) = mat_dims(self.value(b), "matmul_nt rhs")?;
        if k != k2 {
            return Err(shape_err!("matmul_nt: {m}x{k} · ({n}x{k2})ᵀ"));
        }
        let data = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], data)?, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = mat_dims(self.value(a), "transpose")?;
        let data = kernels::transpose(self.value(a).data(), r, c);
        self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(T::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x.max(T::zero()));
        self.push(t, Op::Relu(a))
    }

    /// Softmax along `axis`, computed with per-lane max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(shape_err!("softmax: axis {axis} for shape {:?}", x.shape()));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("softmax: non-finite input".into()));
        }
        let (outer, len, inner) = axis_view(x.shape(), axis);
        let data = kernels::softmax_axis(x.data(), outer, len, inner);
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::Softmax { x: a, axis })
    }

    /// Row-wise softmax over the columns with `mask[col] == true`; masked
    /// columns get exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = mat_dims(x, "masked_softmax")?;
        if mask.len() != c {
            return Err(shape_err!("masked_softmax: mask of {} for {c} columns", mask.len()));
        }
        let data = kernels::masked_softmax_rows(x.data(), r, c, mask)
            .ok_or_else(|| input_err!("softmax over an all-masked axis"))?;
        self.push(Tensor::new(vec![r, c], data)?, Op::MaskedSoftmax { x: a })
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = mat_dims(self.value(a), "log_softmax")?;
        let data = kernels::log_softmax_rows(self.value(a).data(), r, c);
        self.push(Tensor::new(vec![r, c], data)?, Op::LogSoftmax(a))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err!("concat: axis {axis} for shape {base:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err!("concat: {s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_view(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Concat { xs: xs.to_vec(), axis })
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() || len == 0 || start + len > x.shape()[axis] {
            return Err(shape_err!(
                "slice [{start}, {}) on axis {axis} of {:?}",
                start + len,
                x.shape()
            ));
        }
        let (outer, full, inner) = axis_view(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Slice { x: a, axis, start })
    }

    /// Rows `ids` of the `vocab×dim` table, as an `ids.len()×dim` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = mat_dims(t, "embedding")?;
        if ids.is_empty() {
            return Err(input_err!("embedding lookup of an empty id list"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(input_err!("token id {id} outside table of {v} rows"));
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        self.push(out, Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Same-length 1-D convolution over the rows of `x` (`n×d_in`) with a
    /// `k×d_in×d_out` kernel and `d_out` bias; zero padding outside `[0, n)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d_in) = mat_dims(self.value(x), "conv1d input")?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != d_in {
            return Err(shape_err!("conv1d: kernel {ws:?} for input width {d_in}"));
        }
        let (k, d_out) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(config_err!("conv1d: kernel size {k} must be odd"));
        }
        if self.value(b).numel() != d_out {
            return Err(shape_err!("conv1d: bias {:?} for {d_out} outputs", self.value(b).shape()));
        }
        let data = kernels::conv1d_same(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            n,
            k,
            d_in,
            d_out,
        );
        self.push(Tensor::new(vec![n, d_out], data)?, Op::Conv1d { x, w, b })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Picks `x[i, cols[i]]` for every row `i`; output is `rows×1`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = mat_dims(x, "pick")?;
        if cols.len() != r || cols.iter().any(|&j| j >= c) {
            return Err(shape_err!("pick: {} indices into {r}x{c}", cols.len()));
        }
        let data = cols.iter().enumerate().map(|(i, &j)| x.at(i, j)).collect();
        let t = Tensor::new(vec![r, 1], data)?;
        self.push(t, Op::Pick { x: a, cols: cols.to_vec() })
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Visits every node once, in reverse creation order. Forward values are
    /// left untouched. Parameters the loss does not depend on are absent from
    /// the result (see [`Gradients::dense`]).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err!("backward from non-scalar {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: BTreeMap<ParamId, ParamGrad<T>> = BTreeMap::new();
        let mut sparse: BTreeMap<ParamId, BTreeMap<usize, Vec<T>>> = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.as_ref();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let t = Tensor::new(y.shape().to_vec(), gy)?;
                    match out.get_mut(id) {
                        Some(ParamGrad::Dense(acc)) => acc.add_assign(&t),
                        _ => {
                            out.insert(*id, ParamGrad::Dense(t));
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &gy);
                    accumulate(&mut grads, *b, &gy);
                }
                Op::AddRow(a, b) => {
                    let d = self.value(*b).numel();
                    let mut gb = vec![T::zero(); d];
                    for row in gy.chunks(d) {
                        for (g, &v) in gb.iter_mut().zip(row) {
                            *g = *g + v;
                        }
                    }
                    accumulate(&mut grads, *a, &gy);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Mul(a, b) => {
                    let (x, z) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<T> = gy.iter().zip(z).map(|(&g, &v)| g * v).collect();
                    let gb: Vec<T> = gy.iter().zip(x).map(|(&g, &v)| g * v).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(a, f) => {
                    let f = T::from_f64(*f);
                    let ga: Vec<T> = gy.iter().map(|&g| g * f).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).cols();
                    // dA = dC · Bᵀ, dB = Aᵀ · dC
                    let ga = kernels::matmul_nt(&gy, self.value(*b).data(), m, n, k);
                    let mut gb = vec![T::zero(); k * n];
                    kernels::matmul_tn_acc(&mut gb, self.value(*a).data(), &gy, m, k, n);
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).rows();
                    // C = A·Bᵀ: dA = dC · B, dB = dCᵀ · A
                    let ga = kernels::matmul(&gy, self.value(*b).data(), m, n, k);
                    let mut gb = vec![T::zero(); n * k];
                    kernels::matmul_tn_acc(&mut gb, &gy, self.value(*a).data(), m, n, k);
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Transpose(a) => {
                    let (r, c) = y.dims2();
                    accumulate(&mut grads, *a, &kernels::transpose(&gy, r, c));
                }
                Op::Sigmoid(a) => {
                    let one = T::one();
                    let ga: Vec<T> =
                        gy.iter().zip(y.data()).map(|(&g, &s)| g * s * (one - s)).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let one = T::one();
                    let ga: Vec<T> =
                        gy.iter().zip(y.data()).map(|(&g, &t)| g * (one - t * t)).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<T> = gy
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Softmax { x, axis } => {
                    let (outer, len, inner) = axis_view(y.shape(), *axis);
                    let s = y.data();
                    let mut ga = vec![T::zero(); s.len()];
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + j;
                            let dotp: T = (0..len).map(|a| gy[idx(a)] * s[idx(a)]).sum();
                            for a in 0..len {
                                ga[idx(a)] = s[idx(a)] * (gy[idx(a)] - dotp);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &ga);
                }
                Op::MaskedSoftmax { x } => {
                    let (r, c) = y.dims2();
                    let s = y.data();
                    let mut ga = vec![T::zero(); s.len()];
                    for row in 0..r {
                        let sl = row * c..(row + 1) * c;
                        let dotp = kernels::dot(&gy[sl.clone()], &s[sl.clone()]);
                        for j in sl {
                            ga[j] = s[j] * (gy[j] - dotp);
                        }
                    }
                    accumulate(&mut grads, *x, &ga);
                }
                Op::LogSoftmax(x) => {
                    let (r, c) = y.dims2();
                    let mut ga = vec![T::zero(); r * c];
                    for row in 0..r {
                        let sl = row * c..(row + 1) * c;
                        let gsum: T = gy[sl.clone()].iter().copied().sum();
                        for j in sl {
                            ga[j] = gy[j] - y.data()[j].exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *x, &ga);
                }
                Op::Concat { xs, axis } => {
                    let (outer, _, inner) = axis_view(y.shape(), *axis);
                    let mut offset = 0;
                    let total = y.shape()[*axis] * inner;
                    for &v in xs {
                        let chunk = self.value(v).shape()[*axis] * inner;
                        let mut gv = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * total + offset;
                            gv.extend_from_slice(&gy[base..base + chunk]);
                        }
                        accumulate(&mut grads, v, &gv);
                        offset += chunk;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = self.value(*x).shape();
                    let (outer, full, inner) = axis_view(xs, *axis);
                    let len = y.shape()[*axis];
                    let mut gx = vec![T::zero(); xs.iter().product()];
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&gy[src..src + len * inner]);
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Embedding { table, ids } => {
                    let d = y.cols();
                    if let Op::Param(pid) = self.nodes[table.0].op {
                        let rows = sparse.entry(pid).or_default();
                        for (r, &id) in ids.iter().enumerate() {
                            let acc = rows.entry(id).or_insert_with(|| vec![T::zero(); d]);
                            for (a, &g) in acc.iter_mut().zip(&gy[r * d..(r + 1) * d]) {
                                *a = *a + g;
                            }
                        }
                    } else {
                        let mut gt = vec![T::zero(); self.value(*table).numel()];
                        for (r, &id) in ids.iter().enumerate() {
                            for (a, &g) in gt[id * d..(id + 1) * d].iter_mut().zip(&gy[r * d..]) {
                                *a = *a + g;
                            }
                        }
                        accumulate(&mut grads, *table, &gt);
                    }
                }
                Op::Conv1d { x, w, b } => {
                    let (n, d_in) = self.value(*x).dims2();
                    let ws = self.value(*w).shape();
                    let (k, d_out) = (ws[0], ws[2]);
                    let mut gx = vec![T::zero(); n * d_in];
                    let mut gw = vec![T::zero(); ws.iter().product()];
                    let mut gb = vec![T::zero(); d_out];
                    kernels::conv1d_same_backward(
                        &gy,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        Some(&mut gx),
                        Some(&mut gw),
                        Some(&mut gb),
                        n,
                        k,
                        d_in,
                        d_out,
                    );
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *w, &gw);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::SumAll(a) => {
                    let ga = vec![gy[0]; self.value(*a).numel()];
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Pick { x, cols } => {
                    let c = self.value(*x).cols();
                    let mut gx = vec![T::zero(); self.value(*x).numel()];
                    for (i, &j) in cols.iter().enumerate() {
                        gx[i * c + j] = gy[i];
                    }
                    accumulate(&mut grads, *x, &gx);
                }
            }
        }

        for (pid, rows) in sparse {
            let shape = self.param_shape(pid);
            match out.remove(&pid) {
                Some(ParamGrad::Dense(mut dense)) => {
                    ParamGrad::Rows { shape, rows }.add_into_dense(&mut dense);
                    out.insert(pid, ParamGrad::Dense(dense));
                }
                _ => {
                    out.insert(pid, ParamGrad::Rows { shape, rows });
                }
            }
        }
        Ok(Gradients { grads: out })
    }

    fn param_shape(&self, pid: ParamId) -> Vec<usize> {
        self.nodes
            .iter()
            .find(|n| matches!(n.op, Op::Param(p) if p == pid))
            .map(|n| n.value.shape().to_vec())
            .expect("sparse gradient for an unbound parameter")
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &x) in acc.iter_mut().zip(g) {
                *a = *a + x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

impl<T: Scalar> ParamGrad<T> {
    fn add_into_dense(&self, dst: &mut Tensor<T>) {
        let dense = self.to_dense();
        dst.add_assign(&dense);
    }
}
