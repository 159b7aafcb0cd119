use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cgsum::checkpoint::{peek_dtype, Checkpoint};
use cgsum::data::{encode_pairs, load_corpus, tokenize, TokenizeMode, Vocab};
use cgsum::gradcheck::{self, GradCheckConfig};
use cgsum::inference::{beam_search, greedy_decode};
use cgsum::metrics::{corpus_eval, duplicate_rate};
use cgsum::trainer::train as run_training;
use cgsum::{DType, Error, Result, Scalar};
use rayon::prelude::*;

use crate::config::{Overrides, RunConfig};

pub const SRC_VOCAB: &str = "src.vocab";
pub const TGT_VOCAB: &str = "tgt.vocab";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CKPT: &str = "final.ckpt";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

pub fn epoch_ckpt(epoch: usize) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

pub fn train(config: Option<&Path>, ov: &Overrides, corpus: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config, ov)?;
    let pairs = load_corpus(corpus)?;
    if pairs.is_empty() {
        return Err(Error::Input(format!("{}: corpus is empty", corpus.display())));
    }
    let mode = cfg.data.tokenize;
    let (src_cap, tgt_cap) = cfg.vocab_caps();
    let src_vocab = Vocab::from_texts(pairs.iter().map(|p| p.source.as_str()), mode, src_cap, cfg.data.min_freq);
    let tgt_vocab = Vocab::from_texts(pairs.iter().map(|p| p.summary.as_str()), mode, tgt_cap, cfg.data.min_freq);
    let encoded = encode_pairs(&pairs, mode, &src_vocab, &tgt_vocab)?;
    let model_cfg = cfg.model_config(src_vocab.len(), tgt_vocab.len());
    model_cfg.validate()?;

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    src_vocab.write(&out.join(SRC_VOCAB))?;
    tgt_vocab.write(&out.join(TGT_VOCAB))?;
    let log_path = out.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;

    macro_rules! go {
        ($t:ty) => {{
            let outcome = run_training::<$t>(&encoded, model_cfg, &cfg.train, |entry, ck| {
                ck.tokenize = mode;
                ck.save(&out.join(epoch_ckpt(entry.epoch)))?;
                let line = serde_json::to_string(entry).map_err(|e| Error::Numeric(e.to_string()))?;
                writeln!(log, "{line}").map_err(|e| io_err(&log_path, e))?;
                eprintln!("epoch {} lr {:e} loss {:.6}", entry.epoch, entry.lr, entry.train_loss);
                Ok(())
            })?;
            let mut ck = Checkpoint::from_model(
                &outcome.model,
                cfg.train.epochs as u32,
                cfg.train.lr_at(cfg.train.epochs + 1),
                Some(outcome.adam),
            );
            ck.tokenize = mode;
            ck.save(&out.join(FINAL_CKPT))
        }};
    }
    match cfg.dtype {
        DType::F32 => go!(f32),
        DType::F64 => go!(f64),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Input(format!("{}: invalid UTF-8: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    config: Option<&Path>,
    vocab_dir: Option<&Path>,
    ov: &Overrides,
    greedy: bool,
) -> Result<()> {
    let cfg = RunConfig::load(config, ov)?;
    let bytes = fs::read(checkpoint).map_err(|e| io_err(checkpoint, e))?;
    let dir: PathBuf = match vocab_dir {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let src_vocab = Vocab::read(&dir.join(SRC_VOCAB))?;
    let tgt_vocab = Vocab::read(&dir.join(TGT_VOCAB))?;
    let lines = read_lines(input)?;
    let out = match peek_dtype(&bytes)? {
        DType::F32 => decode_all::<f32>(&bytes, &lines, &src_vocab, &tgt_vocab, &cfg, greedy)?,
        DType::F64 => decode_all::<f64>(&bytes, &lines, &src_vocab, &tgt_vocab, &cfg, greedy)?,
    };
    fs::write(output, out).map_err(|e| io_err(output, e))
}

fn decode_all<T: Scalar>(
    bytes: &[u8],
    lines: &[String],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    cfg: &RunConfig,
    greedy: bool,
) -> Result<String> {
    let ck = Checkpoint::<T>::from_bytes(bytes)?;
    let model = ck.to_model()?;
    if src_vocab.len() != model.config.src_vocab_size || tgt_vocab.len() != model.config.tgt_vocab_size {
        return Err(Error::Config(format!(
            "vocabulary sizes {}/{} do not match the checkpoint's {}/{}",
            src_vocab.len(),
            tgt_vocab.len(),
            model.config.src_vocab_size,
            model.config.tgt_vocab_size
        )));
    }
    let g = &cfg.generate;
    let mode = ck.tokenize;
    let summaries: Vec<String> = lines
        .par_iter()
        .map(|line| {
            let toks = tokenize(line, mode);
            if toks.is_empty() {
                return Ok(String::new());
            }
            let src = src_vocab.encode(&toks);
            let ids = if greedy {
                greedy_decode(&model, &src, g.max_len)?
            } else {
                beam_search(&model, &src, g.beam, g.max_len, g.length_norm)?
            };
            Ok(tgt_vocab.decode(&ids).join(mode.joiner()))
        })
        .collect::<Result<_>>()?;
    let mut out = String::new();
    for s in summaries {
        out.push_str(&s);
        out.push('\n');
    }
    Ok(out)
}

pub fn score(candidates: &Path, references: &Path, mode: TokenizeMode, dup_table: Option<&Path>) -> Result<()> {
    let cand = read_tokenized(candidates, mode)?;
    let refs = read_tokenized(references, mode)?;
    if cand.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} has {} lines but {} has {}",
            candidates.display(),
            cand.len(),
            references.display(),
            refs.len()
        )));
    }
    let report = corpus_eval(&cand, &refs)?;
    let json = serde_json::to_string(&report).map_err(|e| Error::Numeric(e.to_string()))?;
    println!("{json}");
    if let Some(path) = dup_table {
        let mut csv = String::from("n,candidate_pct,reference_pct\n");
        for n in 1..=4 {
            csv.push_str(&format!("{n},{},{}\n", report.dup.get(n), duplicate_rate(&refs, n)?));
        }
        fs::write(path, csv).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn read_tokenized(path: &Path, mode: TokenizeMode) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l, mode)).collect())
}

pub fn gradcheck(dims: usize, seed: u64, cgu_enabled: bool, corrupt: Option<&str>) -> Result<()> {
    let cfg = GradCheckConfig { dims, seed, cgu_enabled, ..GradCheckConfig::default() };
    let report = gradcheck::run(&cfg, corrupt)?;
    for p in &report.params {
        println!(
            "{:<16} entries={:<5} max_rel_err={:.3e} {}",
            p.name,
            p.entries,
            p.max_rel_err,
            if p.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} parameters within {:e}", report.params.len(), report.tolerance);
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for parameter(s): {}", failed.join(", "))))
    }
}
