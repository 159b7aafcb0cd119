//! Seeded synthetic corpora for desk-scale experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{encode_pairs, EncodedPair, ExamplePair, TokenizeMode, Vocab, RESERVED};
use crate::error::Result;

/// Copy-plus-tag: the source is a tag followed by content words; the
/// summary is the content copied verbatim and closed by the same tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyTagTask {
    /// Total vocabulary size, reserved ids included.
    pub vocab: usize,
    pub tags: usize,
    pub pairs: usize,
    /// Upper bound on source and summary length in tokens.
    pub max_len: usize,
    pub min_content: usize,
}

impl Default for CopyTagTask {
    fn default() -> Self {
        CopyTagTask { vocab: 40, tags: 4, pairs: 32, max_len: 10, min_content: 3 }
    }
}

impl CopyTagTask {
    pub fn words(&self) -> usize {
        self.vocab - RESERVED.len() - self.tags
    }

    pub fn generate(&self, seed: u64) -> Vec<ExamplePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.pairs)
            .map(|_| {
                let tag = format!("t{}", rng.gen_range(0..self.tags));
                let len = rng.gen_range(self.min_content..self.max_len);
                let content: Vec<String> =
                    (0..len).map(|_| format!("w{}", rng.gen_range(0..self.words()))).collect();
                let source = std::iter::once(tag.clone()).chain(content.iter().cloned());
                let summary = content.iter().cloned().chain(std::iter::once(tag));
                ExamplePair::new(join(source), join(summary))
            })
            .collect()
    }
}

/// Repetition-prone task: the source repeats some words as distractors
/// (`w3 w3 w7 w1 w1 w1`); the summary lists each word once (`w3 w7 w1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepetitionTask {
    pub words: usize,
    pub pairs: usize,
    pub min_distinct: usize,
    pub max_distinct: usize,
    pub max_repeat: usize,
}

impl Default for RepetitionTask {
    fn default() -> Self {
        RepetitionTask { words: 24, pairs: 48, min_distinct: 3, max_distinct: 6, max_repeat: 3 }
    }
}

impl RepetitionTask {
    pub fn generate(&self, seed: u64) -> Vec<ExamplePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<String> = (0..self.words).map(|i| format!("w{i}")).collect();
        (0..self.pairs)
            .map(|_| {
                let k = rng.gen_range(self.min_distinct..=self.max_distinct);
                let picked: Vec<&String> = pool.choose_multiple(&mut rng, k).collect();
                let mut source = Vec::new();
                for w in &picked {
                    for _ in 0..rng.gen_range(1..=self.max_repeat) {
                        source.push((*w).clone());
                    }
                }
                ExamplePair::new(join(source), join(picked.into_iter().cloned()))
            })
            .collect()
    }
}

fn join(tokens: impl IntoIterator<Item = String>) -> String {
    tokens.into_iter().collect::<Vec<_>>().join(" ")
}

/// Whitespace-tokenized corpus with source and target vocabularies built
/// from the pairs themselves.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pairs: Vec<ExamplePair>,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub encoded: Vec<EncodedPair>,
}

pub fn prepare(pairs: Vec<ExamplePair>, max_vocab: usize) -> Result<Prepared> {
    let src_vocab = Vocab::from_texts(pairs.iter().map(|p| p.source.as_str()), TokenizeMode::Whitespace, max_vocab, 1);
    let tgt_vocab = Vocab::from_texts(pairs.iter().map(|p| p.summary.as_str()), TokenizeMode::Whitespace, max_vocab, 1);
    let encoded = encode_pairs(&pairs, TokenizeMode::Whitespace, &src_vocab, &tgt_vocab)?;
    Ok(Prepared { pairs, src_vocab, tgt_vocab, encoded })
}
