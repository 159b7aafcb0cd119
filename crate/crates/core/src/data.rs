//! Corpus ingestion, tokenization, vocabularies and padded batches.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    #[default]
    Whitespace,
    Char,
}

impl TokenizeMode {
    pub fn default_vocab_size(self) -> usize {
        match self {
            TokenizeMode::Whitespace => 50_000,
            TokenizeMode::Char => 10_000,
        }
    }

    /// Separator used when turning tokens back into text.
    pub fn joiner(self) -> &'static str {
        match self {
            TokenizeMode::Whitespace => " ",
            TokenizeMode::Char => "",
        }
    }
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        TokenizeMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
    }
}

pub fn tokenize_bytes(bytes: &[u8], mode: TokenizeMode) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| input_err!("invalid UTF-8 at byte {}", e.valid_up_to()))?;
    Ok(tokenize(text, mode))
}

/// Token ↔ id map with the four reserved ids in front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index = HashMap::new();
        for w in words {
            if index.insert(w.clone(), tokens.len()).is_some() {
                return Err(input_err!("duplicate vocabulary token {w:?}"));
            }
            tokens.push(w);
        }
        Ok(Vocab { tokens, index })
    }

    /// Ranks tokens by descending frequency, ties broken lexicographically.
    /// Keeps at most `max_size` entries in total (reserved ids included) and
    /// drops tokens seen fewer than `min_freq` times.
    pub fn build<'a, I, S>(sentences: I, max_size: usize, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sent in sentences {
            for tok in sent {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = max_size.saturating_sub(RESERVED.len());
        Self::from_tokens(ranked.into_iter().take(keep).map(|(t, _)| t.to_string()))
            .expect("counted tokens are distinct")
    }

    /// Tokenizes `texts` with `mode` and builds a vocabulary from them.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        mode: TokenizeMode,
        max_size: usize,
        min_freq: usize,
    ) -> Self {
        let toks: Vec<Vec<String>> = texts.into_iter().map(|t| tokenize(t, mode)).collect();
        Self::build(toks.iter().map(Vec::as_slice), max_size, min_freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// One non-reserved token per line; line `k` (0-based) holds id `k + 4`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|e| input_err!("{}: invalid UTF-8 at byte {}", path.display(), e.utf8_error().valid_up_to()))?;
        Self::from_tokens(text.lines().map(str::to_string))
    }
}

/// One text/summary pair. `line` is the 1-based corpus line, 0 when the
/// pair did not come from a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub source: String,
    pub summary: String,
    #[serde(skip)]
    pub line: usize,
}

impl ExamplePair {
    pub fn new(source: impl Into<String>, summary: impl Into<String>) -> Self {
        ExamplePair {
            source: source.into(),
            summary: summary.into(),
            line: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    source: String,
    summary: String,
}

/// Reads a JSON-lines corpus with string fields `source` and `summary`.
pub fn load_corpus(path: &Path) -> Result<Vec<ExamplePair>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    for (i, raw) in lines.into_iter().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let text = std::str::from_utf8(raw)
            .map_err(|_| input_err!("{}:{line}: invalid UTF-8", path.display()))?;
        let rec: RawPair = serde_json::from_str(text)
            .map_err(|e| input_err!("{}:{line}: {e}", path.display()))?;
        pairs.push(ExamplePair {
            source: rec.source,
            summary: rec.summary,
            line,
        });
    }
    Ok(pairs)
}

pub fn write_corpus(path: &Path, pairs: &[ExamplePair]) -> Result<()> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p).expect("strings always serialize");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Source ids and target ids (without BOS/EOS).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Tokenizes and encodes pairs; both sides must be nonempty after
/// tokenization.
pub fn encode_pairs(
    pairs: &[ExamplePair],
    mode: TokenizeMode,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<Vec<EncodedPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let line = if p.line > 0 { p.line } else { i + 1 };
            let src = tokenize(&p.source, mode);
            let tgt = tokenize(&p.summary, mode);
            if src.is_empty() || tgt.is_empty() {
                return Err(input_err!("pair {line}: empty source or summary after tokenization"));
            }
            Ok(EncodedPair {
                src: src_vocab.encode(&src),
                tgt: tgt_vocab.encode(&tgt),
            })
        })
        .collect()
}

/// Padded id matrices. Targets are `BOS … EOS`; everything past a row's
/// length is `PAD`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub src_lens: Vec<usize>,
    pub tgt: Vec<Vec<usize>>,
    pub tgt_lens: Vec<usize>,
}

impl Batch {
    /// Builds a batch, truncating sources to `max_src` and summaries to
    /// `max_tgt` tokens before BOS/EOS are added.
    pub fn new(pairs: &[&EncodedPair], max_src: usize, max_tgt: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(input_err!("empty batch"));
        }
        let mut src = Vec::with_capacity(pairs.len());
        let mut tgt = Vec::with_capacity(pairs.len());
        for p in pairs {
            let s: Vec<usize> = p.src.iter().copied().take(max_src).collect();
            if s.is_empty() {
                return Err(input_err!("empty source sequence in batch"));
            }
            if s.iter().any(|&id| id == PAD || id == BOS) {
                return Err(input_err!("source contains PAD or BOS"));
            }
            let mut t = vec![BOS];
            t.extend(p.tgt.iter().copied().take(max_tgt));
            t.push(EOS);
            src.push(s);
            tgt.push(t);
        }
        let src_lens: Vec<usize> = src.iter().map(Vec::len).collect();
        let tgt_lens: Vec<usize> = tgt.iter().map(Vec::len).collect();
        let n_max = *src_lens.iter().max().expect("nonempty");
        let m_max = *tgt_lens.iter().max().expect("nonempty");
        for s in &mut src {
            s.resize(n_max, PAD);
        }
        for t in &mut tgt {
            t.resize(m_max, PAD);
        }
        Ok(Batch { src, src_lens, tgt, tgt_lens })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src_row(&self, i: usize) -> &[usize] {
        &self.src[i][..self.src_lens[i]]
    }

    pub fn tgt_row(&self, i: usize) -> &[usize] {
        &self.tgt[i][..self.tgt_lens[i]]
    }

    pub fn src_mask(&self, i: usize) -> Vec<bool> {
        (0..self.src[i].len()).map(|j| j < self.src_lens[i]).collect()
    }

    pub fn tgt_mask(&self, i: usize) -> Vec<bool> {
        (0..self.tgt[i].len()).map(|j| j < self.tgt_lens[i]).collect()
    }

    /// Number of predicted target tokens (everything after BOS).
    pub fn predicted_tokens(&self) -> usize {
        self.tgt_lens.iter().map(|l| l - 1).sum()
    }
}
