#![allow(dead_code)]

use cgsum::data::{BOS, EOS, PAD};
use cgsum::decoder::decode_step;
use cgsum::model::Model;
use cgsum::tensor::{ParamId, ParamStore};
use cgsum::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, range: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-range..range)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], range: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, n, range)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Forward function over bound parameter vars.
pub type Forward = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

fn weighted_sum(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let w = rand_tensor(&mut rng(seed), &shape, 1.0);
    let w = g.input(w)?;
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn eval(store: &ParamStore<f64>, ids: &[ParamId], f: &Forward, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = ids.iter().map(|&id| g.param(id, store.get(id)).unwrap()).collect();
    let out = f(&mut g, &vars).unwrap();
    let loss = weighted_sum(&mut g, out, seed).unwrap();
    g.value(loss).item()
}

/// Largest relative error between the analytic gradient of a random
/// linear functional of `f`'s output and central differences.
pub fn grad_check(inputs: Vec<Tensor<f64>>, f: &Forward, eps: f64) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(&format!("x{i}"), t).unwrap())
        .collect();
    let seed = 99;
    let grads = {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id, store.get(id)).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        let loss = weighted_sum(&mut g, out, seed).unwrap();
        let grads = g.backward(loss).unwrap();
        ids.iter().map(|&id| grads.dense(id, &store)).collect::<Vec<_>>()
    };
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&store, &ids, f, seed);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&store, &ids, f, seed);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(grads[k].data()[i], numeric));
        }
    }
    worst
}

// Naive f64 reference implementations over plain slices.

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W·x` with `W` stored row-major as `rows×x.len()`.
pub fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    w.chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// One LSTM step, gate blocks `[i, f, g, o]`.
pub fn lstm_naive(x: &[f64], h: &[f64], c: &[f64], w_x: &[f64], w_h: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let zx = matvec(w_x, x);
    let zh = matvec(w_h, h);
    let z: Vec<f64> = (0..4 * n).map(|k| zx[k] + zh[k] + b[k]).collect();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for j in 0..n {
        let (i, f, g, o) = (sig(z[j]), sig(z[n + j]), z[2 * n + j].tanh(), sig(z[3 * n + j]));
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

/// Attention distribution `softmax_i(sᵀ·W_a·h_i)` over unmasked rows.
pub fn attention_naive(s: &[f64], w_a: &[f64], h_rows: &[Vec<f64>], mask: &[bool]) -> Vec<f64> {
    let d_h = h_rows[0].len();
    let mut e = Vec::new();
    for (i, h) in h_rows.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let mut acc = 0.0;
        for (a, sa) in s.iter().enumerate() {
            for b in 0..d_h {
                acc += sa * w_a[a * d_h + b] * h[b];
            }
        }
        e.push(acc);
    }
    let p = softmax_vec(&e);
    let mut out = vec![0.0; h_rows.len()];
    let mut k = 0;
    for i in 0..h_rows.len() {
        if mask[i] {
            out[i] = p[k];
            k += 1;
        }
    }
    out
}

pub fn weighted_rows(alpha: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (a, r) in alpha.iter().zip(rows) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += a * v;
        }
    }
    out
}

pub fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
}

// Exhaustive decoding oracle.

/// Sum of log-probabilities of `tokens` (followed by EOS when `finished`)
/// under teacher forcing.
pub fn sequence_logp(m: &Model<f64>, src: &[usize], tokens: &[usize], finished: bool) -> f64 {
    let mut g = Graph::new();
    let v = m.bind(&mut g).unwrap();
    let (enc, mut state) = m.encode(&mut g, &v, src).unwrap();
    let mut targets = tokens.to_vec();
    if finished {
        targets.push(EOS);
    }
    let mut prev = BOS;
    let mut total = 0.0;
    for &y in &targets {
        let (probs, next, _) = decode_step(&mut g, prev, state, &enc, &v.decoder).unwrap();
        total += g.value(probs).data()[y].ln();
        state = next;
        prev = y;
    }
    total
}

/// Every hypothesis a decode of at most `max_len` steps can end with.
pub fn enumerate(content: &[usize], max_len: usize) -> Vec<(Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for step in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            out.push((prefix.clone(), true));
            for &t in content {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        frontier = next;
        if step + 1 == max_len {
            out.extend(frontier.iter().map(|p| (p.clone(), false)));
        }
    }
    out
}

pub fn oracle_ranking(m: &Model<f64>, src: &[usize], max_len: usize, norm: bool) -> Vec<(f64, Vec<usize>)> {
    let content: Vec<usize> = (0..m.config.tgt_vocab_size).filter(|&t| t != BOS && t != EOS && t != PAD).collect();
    let mut scored: Vec<(f64, Vec<usize>)> = enumerate(&content, max_len)
        .into_iter()
        .map(|(toks, fin)| {
            let lp = sequence_logp(m, src, &toks, fin);
            let len = toks.len() + usize::from(fin);
            let score = if norm { lp / len as f64 } else { lp };
            let mut key = toks;
            if fin {
                key.push(EOS);
            }
            (score, key)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored
}

