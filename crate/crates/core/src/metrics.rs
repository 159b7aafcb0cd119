//! ROUGE-N / ROUGE-L F1 and the sentence-level duplicate n-gram rate.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return RougeScore::default();
        }
        let p = overlap as f64 / cand_total as f64;
        let r = overlap as f64 / ref_total as f64;
        RougeScore { precision: p, recall: r, f1: f1(p, r) }
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ngram_counts<S: Eq + Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut counts = HashMap::new();
    if n == 0 {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap F1. `n = 0` or a side shorter than `n` scores 0.
pub fn rouge_n<S: Eq + Hash>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    if n == 0 || candidate.len() < n || reference.len() < n {
        return RougeScore::default();
    }
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(overlap, candidate.len() + 1 - n, reference.len() + 1 - n)
}

/// Longest common subsequence length.
pub fn lcs_len<S: Eq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: Eq>(candidate: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Percentage (0 to 100) of n-gram occurrences that repeat an earlier one,
/// computed per sentence as `(total − distinct) / total` (0 when a sentence
/// has no n-grams) and averaged over sentences.
pub fn duplicate_rate<S: Eq + Hash, T: AsRef<[S]>>(sentences: &[T], n: usize) -> Result<f64> {
    if sentences.is_empty() {
        return Err(input_err!("duplicate rate of an empty corpus"));
    }
    if !(1..=4).contains(&n) {
        return Err(input_err!("duplicate rate defined for n in 1..=4, got {n}"));
    }
    let sum: f64 = sentences.iter().map(|s| sentence_duplicate_rate(s.as_ref(), n)).sum();
    Ok(100.0 * sum / sentences.len() as f64)
}

pub fn sentence_duplicate_rate<S: Eq + Hash>(tokens: &[S], n: usize) -> f64 {
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() + 1 - n;
    let distinct = tokens.windows(n).collect::<HashSet<_>>().len();
    (total - distinct) as f64 / total as f64
}

/// Duplicate percentages for n = 1..=4, keyed "1" … "4".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateReport(pub BTreeMap<String, f64>);

impl DuplicateReport {
    pub fn compute<S: Eq + Hash, T: AsRef<[S]>>(sentences: &[T]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for n in 1..=4 {
            map.insert(n.to_string(), duplicate_rate(sentences, n)?);
        }
        Ok(DuplicateReport(map))
    }

    pub fn get(&self, n: usize) -> f64 {
        self.0.get(&n.to_string()).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub dup: DuplicateReport,
    pub pairs: usize,
}

/// Macro-averaged ROUGE F1 over aligned pairs plus candidate duplicate rates.
pub fn corpus_eval<S: Eq + Hash, T: AsRef<[S]>>(candidates: &[T], references: &[T]) -> Result<CorpusReport> {
    if candidates.len() != references.len() {
        return Err(input_err!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        ));
    }
    if candidates.is_empty() {
        return Err(input_err!("nothing to evaluate"));
    }
    let (mut r1, mut r2, mut rl) = (0.0, 0.0, 0.0);
    for (c, r) in candidates.iter().zip(references) {
        let (c, r) = (c.as_ref(), r.as_ref());
        r1 += rouge_n(c, r, 1).f1;
        r2 += rouge_n(c, r, 2).f1;
        rl += rouge_l(c, r).f1;
    }
    let n = candidates.len() as f64;
    Ok(CorpusReport {
        rouge1_f: r1 / n,
        rouge2_f: r2 / n,
        rouge_l_f: rl / n,
        dup: DuplicateReport::compute(candidates)?,
        pairs: candidates.len(),
    })
}
