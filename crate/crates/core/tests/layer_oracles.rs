mod common;

use cgsum::cgu::{cgu_apply, gate, inception_block, self_attention, CguParams, CguVars, ConvVars};
use cgsum::decoder::{
    attention_weights, context_vector, decode_step, DecoderParams, DecoderState,
};
use cgsum::layers::{bilstm_encode, lstm_cell, EncoderStates, Initializer, LstmParams, LstmVars};
use cgsum::tensor::{kernels, ParamStore};
use cgsum::{Error, Graph, Tensor};
use common::*;

fn lstm_store(input: usize, hidden: usize, seed: u64) -> (ParamStore<f64>, LstmParams) {
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, &mut Initializer::with_range(seed, 0.8, true), "l", input, hidden)
        .unwrap();
    (store, p)
}

#[test]
fn lstm_cell_closed_form_with_zero_params() {
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, &mut Initializer::new(0), "l", 2, 1).unwrap();
    for id in [p.w_x, p.w_h, p.b] {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let x = g.input(Tensor::row(vec![0.7, -0.3]).unwrap()).unwrap();
    let h0 = g.input(Tensor::row(vec![0.0]).unwrap()).unwrap();
    let c0 = g.input(Tensor::row(vec![1.0]).unwrap()).unwrap();
    let (h, c) = lstm_cell(&mut g, x, h0, c0, &vars).unwrap();
    assert_eq!(g.value(c).data(), &[0.5]);
    let expected = 0.5 * 0.5f64.tanh();
    assert!((g.value(h).item() - expected).abs() < 1e-15);
    assert!((g.value(h).item() - 0.231059).abs() < 1e-6);
}

#[test]
fn lstm_cell_matches_naive_loops() {
    let (store, p) = lstm_store(3, 4, 11);
    let mut r = rng(12);
    let (x, h0, c0) = (rand_vec(&mut r, 3, 1.0), rand_vec(&mut r, 4, 1.0), rand_vec(&mut r, 4, 1.0));
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let xv = g.input(Tensor::row(x.clone()).unwrap()).unwrap();
    let hv = g.input(Tensor::row(h0.clone()).unwrap()).unwrap();
    let cv = g.input(Tensor::row(c0.clone()).unwrap()).unwrap();
    let (h, c) = lstm_cell(&mut g, xv, hv, cv, &vars).unwrap();
    let (hn, cn) =
        lstm_naive(&x, &h0, &c0, store.get(p.w_x).data(), store.get(p.w_h).data(), store.get(p.b).data());
    assert!(max_abs_diff(g.value(h).data(), &hn) < 1e-14);
    assert!(max_abs_diff(g.value(c).data(), &cn) < 1e-14);
}

#[test]
fn lstm_cell_gradient_matches_finite_differences() {
    let mut r = rng(13);
    let hidden = 3;
    let inputs = vec![
        rand_tensor(&mut r, &[4 * hidden, 2], 0.8),
        rand_tensor(&mut r, &[4 * hidden, hidden], 0.8),
        rand_tensor(&mut r, &[4 * hidden], 0.8),
        rand_tensor(&mut r, &[1, 2], 1.0),
        rand_tensor(&mut r, &[1, hidden], 1.0),
        rand_tensor(&mut r, &[1, hidden], 1.0),
    ];
    let f: &Forward = &move |g, v| {
        let p = LstmVars { w_x: v[0], w_h: v[1], b: v[2], hidden };
        let (h, c) = lstm_cell(g, v[3], v[4], v[5], &p)?;
        g.concat(&[h, c], 1)
    };
    let err = grad_check(inputs, f, 1e-6);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn lstm_cell_shape_mismatch() {
    let (store, p) = lstm_store(2, 3, 1);
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let x = g.input(Tensor::row(vec![0.0, 0.0]).unwrap()).unwrap();
    let h = g.input(Tensor::row(vec![0.0; 2]).unwrap()).unwrap();
    let c = g.input(Tensor::row(vec![0.0; 3]).unwrap()).unwrap();
    assert!(matches!(lstm_cell(&mut g, x, h, c, &vars), Err(Error::Shape(_))));
}

struct Encoder {
    store: ParamStore<f64>,
    embed: cgsum::tensor::ParamId,
    fwd: LstmParams,
    bwd: LstmParams,
}

fn encoder(vocab: usize, emb: usize, hidden: usize, seed: u64) -> Encoder {
    let mut store = ParamStore::new();
    let mut init = Initializer::with_range(seed, 0.8, true);
    let e = cgsum::layers::Embedding::register(&mut store, &mut init, "emb", vocab, emb).unwrap();
    let fwd = LstmParams::register(&mut store, &mut init, "f", emb, hidden).unwrap();
    let bwd = LstmParams::register(&mut store, &mut init, "b", emb, hidden).unwrap();
    Encoder { store, embed: e.table, fwd, bwd }
}

fn encode(enc: &Encoder, ids: &[usize], swap: bool) -> Tensor<f64> {
    let mut g = Graph::new();
    let emb = g.param(enc.embed, enc.store.get(enc.embed)).unwrap();
    let mut f = enc.fwd.bind(&mut g, &enc.store).unwrap();
    let mut b = enc.bwd.bind(&mut g, &enc.store).unwrap();
    if swap {
        std::mem::swap(&mut f, &mut b);
    }
    let out = bilstm_encode(&mut g, ids, emb, &f, &b).unwrap();
    g.value(out.states.h).clone()
}

#[test]
fn bilstm_single_token_is_two_cells() {
    let enc = encoder(6, 3, 2, 21);
    let h = encode(&enc, &[4], false);
    let x = enc.store.get(enc.embed).row_slice(4).to_vec();
    let z = [0.0, 0.0];
    let s = &enc.store;
    let (hf, _) = lstm_naive(&x, &z, &z, s.get(enc.fwd.w_x).data(), s.get(enc.fwd.w_h).data(), s.get(enc.fwd.b).data());
    let (hb, _) = lstm_naive(&x, &z, &z, s.get(enc.bwd.w_x).data(), s.get(enc.bwd.w_h).data(), s.get(enc.bwd.b).data());
    let expected: Vec<f64> = hf.into_iter().chain(hb).collect();
    assert!(max_abs_diff(h.data(), &expected) < 1e-14);
}

#[test]
fn bilstm_shapes() {
    let enc = encoder(9, 3, 2, 22);
    for n in [1, 2, 7] {
        let ids: Vec<usize> = (0..n).map(|i| 4 + i % 5).collect();
        assert_eq!(encode(&enc, &ids, false).shape(), &[n, 4]);
    }
    let mut g = Graph::new();
    let emb = g.param(enc.embed, enc.store.get(enc.embed)).unwrap();
    let f = enc.fwd.bind(&mut g, &enc.store).unwrap();
    let b = enc.bwd.bind(&mut g, &enc.store).unwrap();
    assert!(matches!(bilstm_encode(&mut g, &[], emb, &f, &b), Err(Error::Input(_))));
}

#[test]
fn bilstm_reversal_swaps_directions() {
    let enc = encoder(10, 3, 2, 23);
    let ids = [4, 9, 5, 7, 6];
    let h = encode(&enc, &ids, false);
    let rev: Vec<usize> = ids.iter().rev().copied().collect();
    let h_rev = encode(&enc, &rev, true);
    let n = ids.len();
    for i in 0..n {
        let a = h.row_slice(n - 1 - i);
        let b = h_rev.row_slice(i);
        assert!(max_abs_diff(&a[..2], &b[2..]) < 1e-15);
        assert!(max_abs_diff(&a[2..], &b[..2]) < 1e-15);
    }
}

#[test]
fn bilstm_causality() {
    let enc = encoder(10, 3, 2, 24);
    let ids = [4, 5, 6, 7, 8, 9];
    let base = encode(&enc, &ids, false);
    for j in 0..ids.len() {
        let mut alt = ids;
        alt[j] = if ids[j] == 4 { 5 } else { 4 };
        let h = encode(&enc, &alt, false);
        for i in 0..ids.len() {
            let (a, b) = (base.row_slice(i), h.row_slice(i));
            assert_eq!(a[..2] != b[..2], i >= j, "forward half row {i}, token {j}");
            assert_eq!(a[2..] != b[2..], i <= j, "backward half row {i}, token {j}");
        }
    }
}

// CGU

fn cgu_store(d_h: usize, d_b: usize, seed: u64, range: f64) -> (ParamStore<f64>, CguParams) {
    let mut store = ParamStore::new();
    let p = CguParams::register(&mut store, &mut Initializer::with_range(seed, range, true), "cgu", d_h, d_b)
        .unwrap();
    (store, p)
}

fn conv_relu(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>, n: usize) -> Vec<f64> {
    let (k, d_in, d_out) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    kernels::conv1d_same(x, w.data(), b.data(), n, k, d_in, d_out)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

#[test]
fn inception_block_matches_scripted_composition() {
    let (d_h, d_b, n) = (6, 3, 4);
    let (store, p) = cgu_store(d_h, d_b, 31, 0.7);
    let h = rand_tensor(&mut rng(32), &[n, d_h], 1.0);
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let hv = g.input(h.clone()).unwrap();
    let out = inception_block(&mut g, hv, &vars).unwrap();

    let s = |c: &cgsum::cgu::ConvParams| (store.get(c.w), store.get(c.b));
    let (w, b) = s(&p.branch1);
    let b1 = conv_relu(h.data(), w, b, n);
    let (w, b) = s(&p.branch2);
    let b2 = conv_relu(h.data(), w, b, n);
    let (w, b) = s(&p.branch3a);
    let b3 = conv_relu(h.data(), w, b, n);
    let (w, b) = s(&p.branch3b);
    let b3 = conv_relu(&b3, w, b, n);
    let mut cat = Vec::new();
    for i in 0..n {
        for part in [&b1, &b2, &b3] {
            cat.extend_from_slice(&part[i * d_b..(i + 1) * d_b]);
        }
    }
    let (w, b) = s(&p.merge);
    let expected = conv_relu(&cat, w, b, n);
    assert_eq!(g.value(out).shape(), &[n, d_h]);
    assert!(max_abs_diff(g.value(out).data(), &expected) < 1e-12);
}

#[test]
fn inception_block_zero_weights_and_shapes() {
    let (mut store, p) = cgu_store(4, 2, 33, 0.5);
    for id in p.ids() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for n in [1, 4, 9] {
        let mut g = Graph::new();
        let vars = p.bind(&mut g, &store).unwrap();
        let h = g.input(rand_tensor(&mut rng(n as u64), &[n, 4], 1.0)).unwrap();
        let out = inception_block(&mut g, h, &vars).unwrap();
        assert_eq!(g.value(out).shape(), &[n, 4]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }
}

fn attention_oracle(gm: &Tensor<f64>, w_att: &Tensor<f64>, mask: &[bool]) -> Vec<f64> {
    let (n, d) = gm.dims2();
    let rows = rows_of(gm);
    let keys: Vec<Vec<f64>> = rows.iter().map(|r| matvec(w_att.data(), r)).collect();
    let mut out = Vec::new();
    for q in &rows {
        let mut scores = Vec::new();
        for (j, k) in keys.iter().enumerate() {
            if mask[j] {
                scores.push(q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt());
            }
        }
        let p = softmax_vec(&scores);
        let mut acc = vec![0.0; d];
        let mut t = 0;
        for j in 0..n {
            if mask[j] {
                for c in 0..d {
                    acc[c] += p[t] * rows[j][c];
                }
                t += 1;
            }
        }
        out.extend(acc);
    }
    out
}

fn run_attention(gm: &Tensor<f64>, w_att: &Tensor<f64>, mask: &[bool]) -> cgsum::Result<Tensor<f64>> {
    let mut g = Graph::new();
    let gv = g.input(gm.clone())?;
    let wv = g.input(w_att.clone())?;
    let a = self_attention(&mut g, gv, wv, mask)?;
    Ok(g.value(a).clone())
}

#[test]
fn self_attention_matches_three_loop_oracle() {
    let mut r = rng(41);
    let gm = rand_tensor(&mut r, &[3, 4], 1.5);
    let w = rand_tensor(&mut r, &[4, 4], 1.5);
    let a = run_attention(&gm, &w, &[true; 3]).unwrap();
    assert!(max_abs_diff(a.data(), &attention_oracle(&gm, &w, &[true; 3])) < 1e-12);
    let mask = [true, false, true];
    let a = run_attention(&gm, &w, &mask).unwrap();
    assert!(max_abs_diff(a.data(), &attention_oracle(&gm, &w, &mask)) < 1e-12);
}

#[test]
fn self_attention_trivial_cases() {
    let mut r = rng(42);
    let one = rand_tensor(&mut r, &[1, 3], 1.0);
    let w = rand_tensor(&mut r, &[3, 3], 1.0);
    assert!(run_attention(&one, &w, &[true]).unwrap().bit_eq(&one));

    let gm = rand_tensor(&mut r, &[4, 3], 1.0);
    let mask = [true, true, false, true];
    let a = run_attention(&gm, &Tensor::zeros(&[3, 3]), &mask).unwrap();
    let rows = rows_of(&gm);
    for c in 0..3 {
        let mean = (rows[0][c] + rows[1][c] + rows[3][c]) / 3.0;
        for i in 0..4 {
            assert!((a.at(i, c) - mean).abs() < 1e-15);
        }
    }
    assert!(matches!(run_attention(&gm, &w, &[false; 4]), Err(Error::Input(_))));
}

#[test]
fn gate_matches_elementwise_oracle() {
    let mut r = rng(51);
    let h = rand_tensor(&mut r, &[3, 4], 2.0);
    let x = rand_tensor(&mut r, &[3, 4], 6.0);
    let mut g = Graph::new();
    let (hv, xv) = (g.input(h.clone()).unwrap(), g.input(x.clone()).unwrap());
    let out = gate(&mut g, hv, xv).unwrap();
    let expected: Vec<f64> = h.data().iter().zip(x.data()).map(|(a, b)| a * sig(*b)).collect();
    assert!(max_abs_diff(g.value(out.h_tilde).data(), &expected) < 1e-15);

    let zero = g.input(Tensor::zeros(&[3, 4])).unwrap();
    let half = gate(&mut g, hv, zero).unwrap();
    let halves: Vec<f64> = h.data().iter().map(|v| 0.5 * v).collect();
    assert_eq!(g.value(half.h_tilde).data(), &halves[..]);

    let bad = g.input(Tensor::zeros(&[3, 3])).unwrap();
    assert!(matches!(gate(&mut g, hv, bad), Err(Error::Shape(_))));
}

#[test]
fn cgu_bypass_and_zero_params() {
    let (mut store, p) = cgu_store(4, 2, 52, 0.5);
    let h = rand_tensor(&mut rng(53), &[5, 4], 1.0);
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let states = EncoderStates { h: g.input(h.clone()).unwrap(), mask: vec![true; 5] };
    let (out, gate_out) = cgu_apply(&mut g, &states, &vars, true).unwrap();
    assert!(gate_out.is_none());
    assert!(g.value(out.h).bit_eq(&h));

    for id in p.ids() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let states = EncoderStates { h: g.input(h.clone()).unwrap(), mask: vec![true; 5] };
    let (out, _) = cgu_apply(&mut g, &states, &vars, false).unwrap();
    let halves: Vec<f64> = h.data().iter().map(|v| 0.5 * v).collect();
    assert_eq!(g.value(out.h).data(), &halves[..]);
}

#[test]
fn cgu_gradient_matches_finite_differences() {
    let (d_h, d_b, n) = (4, 2, 3);
    let (store, p) = cgu_store(d_h, d_b, 54, 1.0);
    let mut inputs: Vec<Tensor<f64>> = p.ids().into_iter().map(|id| store.get(id).clone()).collect();
    inputs.push(rand_tensor(&mut rng(55), &[n, d_h], 1.5));
    let f: &Forward = &|g, v| {
        let conv = |i: usize| ConvVars { w: v[i], b: v[i + 1] };
        let vars = CguVars {
            branch1: conv(0),
            branch2: conv(2),
            branch3a: conv(4),
            branch3b: conv(6),
            merge: conv(8),
            w_att: v[10],
        };
        let states = EncoderStates { h: v[11], mask: vec![true, true, false] };
        let (out, _) = cgu_apply(g, &states, &vars, false)?;
        Ok(out.h)
    };
    let err = grad_check(inputs, f, 1e-6);
    assert!(err < 1e-4, "{err:e}");
}

// Decoder

#[test]
fn attention_weights_and_context_match_loops() {
    let mut r = rng(61);
    let (hidden, d_h) = (3, 4);
    let s = rand_vec(&mut r, hidden, 1.0);
    let w_a = rand_tensor(&mut r, &[hidden, d_h], 1.0);
    let h = rand_tensor(&mut r, &[3, d_h], 1.0);
    for mask in [vec![true; 3], vec![true, false, true]] {
        let mut g = Graph::new();
        let sv = g.input(Tensor::row(s.clone()).unwrap()).unwrap();
        let wv = g.input(w_a.clone()).unwrap();
        let enc = EncoderStates { h: g.input(h.clone()).unwrap(), mask: mask.clone() };
        let alpha = attention_weights(&mut g, sv, &enc, wv).unwrap();
        let oracle = attention_naive(&s, w_a.data(), &rows_of(&h), &mask);
        assert!(max_abs_diff(g.value(alpha).data(), &oracle) < 1e-12);
        let total: f64 = g.value(alpha).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        if !mask[1] {
            assert_eq!(g.value(alpha).data()[1], 0.0);
        }
        let c = context_vector(&mut g, alpha, enc.h).unwrap();
        assert!(max_abs_diff(g.value(c).data(), &weighted_rows(&oracle, &rows_of(&h))) < 1e-12);
    }
}

#[test]
fn attention_trivial_cases() {
    let mut r = rng(62);
    let h = rand_tensor(&mut r, &[3, 2], 1.0);
    let mut g = Graph::new();
    let s = g.input(Tensor::row(vec![0.3, -0.4]).unwrap()).unwrap();
    let zero_w = g.input(Tensor::zeros(&[2, 2])).unwrap();
    let enc = EncoderStates { h: g.input(h.clone()).unwrap(), mask: vec![true, false, true] };
    let alpha = attention_weights(&mut g, s, &enc, zero_w).unwrap();
    assert_eq!(g.value(alpha).data(), &[0.5, 0.0, 0.5]);

    let single = EncoderStates { h: g.input(Tensor::row(vec![1.0, 2.0]).unwrap()).unwrap(), mask: vec![true] };
    let a1 = attention_weights(&mut g, s, &single, zero_w).unwrap();
    assert_eq!(g.value(a1).data(), &[1.0]);

    let onehot = g.input(Tensor::row(vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
    let c = context_vector(&mut g, onehot, enc.h).unwrap();
    assert_eq!(g.value(c).data(), h.row_slice(1));

    let masked = EncoderStates { h: enc.h, mask: vec![false; 3] };
    assert!(matches!(attention_weights(&mut g, s, &masked, zero_w), Err(Error::Input(_))));
    let wrong = g.input(Tensor::row(vec![0.5, 0.5]).unwrap()).unwrap();
    assert!(matches!(context_vector(&mut g, wrong, enc.h), Err(Error::Shape(_))));
}

#[test]
fn decode_step_matches_scripted_oracle() {
    let (vocab, emb, hidden, d_h) = (5, 4, 4, 8);
    let mut store = ParamStore::new();
    let p = DecoderParams::register(&mut store, &mut Initializer::with_range(71, 0.9, true), vocab, emb, hidden, d_h)
        .unwrap();
    let mut r = rng(72);
    let h = rand_tensor(&mut r, &[2, d_h], 1.0);
    let (s0, c0) = (rand_vec(&mut r, hidden, 1.0), rand_vec(&mut r, hidden, 1.0));
    let y_prev = 3;

    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let enc = EncoderStates { h: g.input(h.clone()).unwrap(), mask: vec![true; 2] };
    let state = DecoderState {
        s: g.input(Tensor::row(s0.clone()).unwrap()).unwrap(),
        c: g.input(Tensor::row(c0.clone()).unwrap()).unwrap(),
    };
    let (probs, next, alpha) = decode_step(&mut g, y_prev, state, &enc, &vars).unwrap();

    let st = |id| store.get(id).data();
    let x = store.get(p.embed.table).row_slice(y_prev).to_vec();
    let (s1, c1) = lstm_naive(&x, &s0, &c0, st(p.lstm.w_x), st(p.lstm.w_h), st(p.lstm.b));
    let a = attention_naive(&s0, st(p.w_a), &rows_of(&h), &[true, true]);
    let ctx = weighted_rows(&a, &rows_of(&h));
    let feat: Vec<f64> = ctx.iter().chain(&s1).copied().collect();
    let logits: Vec<f64> = matvec(st(p.out.w), &feat).iter().zip(st(p.out.b)).map(|(a, b)| a + b).collect();
    let pv = softmax_vec(&logits);

    assert!(max_abs_diff(g.value(alpha).data(), &a) < 1e-12);
    assert!(max_abs_diff(g.value(next.s).data(), &s1) < 1e-12);
    assert!(max_abs_diff(g.value(next.c).data(), &c1) < 1e-12);
    assert!(max_abs_diff(g.value(probs).data(), &pv) < 1e-12);

    assert!(matches!(decode_step(&mut g, vocab, state, &enc, &vars), Err(Error::Input(_))));
}

#[test]
fn decode_step_zero_output_is_uniform() {
    let (vocab, emb, hidden, d_h) = (7, 3, 3, 6);
    let mut store = ParamStore::new();
    let p = DecoderParams::register(&mut store, &mut Initializer::new(73), vocab, emb, hidden, d_h).unwrap();
    for id in [p.out.w, p.out.b] {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g, &store).unwrap();
    let enc = EncoderStates { h: g.input(rand_tensor(&mut rng(74), &[3, d_h], 1.0)).unwrap(), mask: vec![true; 3] };
    let state = DecoderState {
        s: g.input(Tensor::zeros(&[1, hidden])).unwrap(),
        c: g.input(Tensor::zeros(&[1, hidden])).unwrap(),
    };
    let (probs, _, _) = decode_step(&mut g, 2, state, &enc, &vars).unwrap();
    for &v in g.value(probs).data() {
        assert!((v - 1.0 / vocab as f64).abs() < 1e-15);
    }
}
