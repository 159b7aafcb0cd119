//! Summary generation: greedy decoding and beam search.
//!
//! A decode runs for at most `max_len` steps. A hypothesis ends when it
//! emits EOS or when it has produced `max_len` tokens. Returned token ids
//! never include EOS, PAD or BOS.

use std::cmp::Ordering;

use crate::data::{BOS, EOS, PAD};
use crate::decoder::{decode_step_logits, DecoderState};
use crate::error::{config_err, Result};
use crate::layers::EncoderStates;
use crate::model::{Model, ModelVars};
use crate::tensor::{Graph, Scalar};

pub const DEFAULT_BEAM: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, without the closing EOS.
    pub tokens: Vec<usize>,
    /// Sum of `log P` over every emitted token, EOS included.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Number of scored tokens, counting the EOS of a finished hypothesis.
    pub fn len(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Final ranking score: total log-probability, divided by length when
    /// `length_norm` is on.
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm && self.len() > 0 {
            self.log_prob / self.len() as f64
        } else {
            self.log_prob
        }
    }

    /// The token sequence used for tie-breaking (EOS appended if finished).
    fn key(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens.iter().copied().chain(self.finished.then_some(EOS))
    }
}

/// Higher score first, then lexicographically smaller token sequence.
pub fn rank(a: &Hypothesis, b: &Hypothesis, length_norm: bool) -> Ordering {
    b.score(length_norm)
        .total_cmp(&a.score(length_norm))
        .then_with(|| a.key().cmp(b.key()))
}

/// Decoder context for one source: shared graph, encoder states and the
/// initial decoder state.
struct Session<'p, T: Scalar> {
    g: Graph<'p, T>,
    vars: ModelVars,
    enc: EncoderStates,
    init: DecoderState,
}

impl<'p, T: Scalar> Session<'p, T> {
    fn new(model: &'p Model<T>, src: &[usize]) -> Result<Self> {
        let mut g = Graph::new();
        let vars = model.bind(&mut g)?;
        let (enc, init) = model.encode(&mut g, &vars, src)?;
        Ok(Session { g, vars, enc, init })
    }

    /// Log-probabilities of the next token, with PAD and BOS set to −∞.
    fn step(&mut self, y_prev: usize, state: DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        let (logits, step) = decode_step_logits(&mut self.g, y_prev, state, &self.enc, &self.vars.decoder)?;
        let logp = self.g.log_softmax(logits)?;
        let mut out: Vec<f64> = self.g.value(logp).data().iter().map(|x| x.as_f64()).collect();
        out[PAD] = f64::NEG_INFINITY;
        out[BOS] = f64::NEG_INFINITY;
        Ok((out, step.state))
    }
}

fn check_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(config_err!("max_len must be at least 1"));
    }
    Ok(())
}

/// Picks the most probable token at every step; ties go to the lowest id.
pub fn greedy_decode<T: Scalar>(model: &Model<T>, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
    check_len(max_len)?;
    let mut sess = Session::new(model, src)?;
    let mut state = sess.init;
    let mut y = BOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (logp, next) = sess.step(y, state)?;
        let best = argmax(&logp);
        if best == EOS {
            break;
        }
        out.push(best);
        y = best;
        state = next;
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Beam search returning the best hypothesis's tokens.
pub fn beam_search<T: Scalar>(
    model: &Model<T>,
    src: &[usize],
    beam: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<usize>> {
    Ok(beam_search_hypotheses(model, src, beam, max_len, length_norm)?
        .into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default())
}

/// Beam search returning every completed hypothesis, best first.
///
/// At each step all one-token extensions of the live hypotheses are ranked
/// by total log-probability (ties: lexicographically smaller sequence) and
/// the best `beam` are kept. Kept extensions ending in EOS are finished and
/// never extended again. Hypotheses still live after `max_len` tokens are
/// completed as they stand.
pub fn beam_search_hypotheses<T: Scalar>(
    model: &Model<T>,
    src: &[usize],
    beam: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(config_err!("beam width must be at least 1"));
    }
    check_len(max_len)?;
    let mut sess = Session::new(model, src)?;
    let mut live: Vec<(Hypothesis, DecoderState)> =
        vec![(Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }, sess.init)];
    let mut done: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut cands: Vec<(Hypothesis, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (idx, (hyp, state)) in live.iter().enumerate() {
            let y = hyp.tokens.last().copied().unwrap_or(BOS);
            let (logp, next) = sess.step(y, *state)?;
            states.push(next);
            for (tok, &lp) in logp.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let finished = tok == EOS;
                let mut tokens = hyp.tokens.clone();
                if !finished {
                    tokens.push(tok);
                }
                cands.push((Hypothesis { tokens, log_prob: hyp.log_prob + lp, finished }, idx));
            }
        }
        cands.sort_by(|a, b| rank(&a.0, &b.0, false));
        cands.truncate(beam);
        live.clear();
        for (hyp, idx) in cands {
            if hyp.finished {
                done.push(hyp);
            } else {
                live.push((hyp, states[idx]));
            }
        }
    }
    done.extend(live.into_iter().map(|(h, _)| h));
    done.sort_by(|a, b| rank(a, b, length_norm));
    Ok(done)
}
