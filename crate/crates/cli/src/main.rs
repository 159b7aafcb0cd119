//! `cgsum`: train, generate, score and gradcheck.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! error (including a failed gradient check).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use cgsum::data::TokenizeMode;
use cgsum::Error;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "cgsum", version, about = "Abstractive summarization with a convolutional gated unit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tokenize {
    Whitespace,
    Char,
}

impl From<Tokenize> for TokenizeMode {
    fn from(t: Tokenize) -> Self {
        match t {
            Tokenize::Whitespace => TokenizeMode::Whitespace,
            Tokenize::Char => TokenizeMode::Char,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a JSON-lines corpus; writes vocabularies, per-epoch
    /// checkpoints and a JSON-lines loss log into the output directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        cgu: Option<OnOff>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Summarize one source text per input line.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding src.vocab and tgt.vocab; defaults to the
        /// checkpoint's directory.
        #[arg(long)]
        vocab_dir: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Use greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// ROUGE-1/2/L F1 and duplicate n-gram rates for aligned files.
    Score {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, value_enum, default_value = "whitespace")]
        tokenize: Tokenize,
        /// Write 1-4-gram duplicate percentages as CSV.
        #[arg(long)]
        dup_table: Option<PathBuf>,
    },
    /// Finite-difference check of every model parameter in f64.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        dims: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "on")]
        cgu: OnOff,
        /// Shift the analytic gradient of this parameter (failure-path check).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Input(_) | Error::Io { .. } | Error::Format { .. } => 2,
        Error::Numeric(_) | Error::Shape(_) => 3,
    }
}

fn init_threads() -> cgsum::Result<()> {
    let Ok(v) = std::env::var("CGU_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CGU_NUM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> cgsum::Result<()> {
    init_threads()?;
    match cli.cmd {
        Command::Train { config, corpus, out, seed, cgu, lr, epochs, batch_size } => {
            let ov = Overrides {
                seed,
                cgu: cgu.map(|c| c == OnOff::On),
                lr,
                epochs,
                batch_size,
                ..Default::default()
            };
            commands::train(config.as_deref(), &ov, &corpus, &out)
        }
        Command::Generate { checkpoint, input, output, config, vocab_dir, beam, max_len, greedy } => {
            let ov = Overrides { beam, max_len, ..Default::default() };
            commands::generate(&checkpoint, &input, &output, config.as_deref(), vocab_dir.as_deref(), &ov, greedy)
        }
        Command::Score { candidates, references, tokenize, dup_table } => {
            commands::score(&candidates, &references, tokenize.into(), dup_table.as_deref())
        }
        Command::Gradcheck { dims, seed, cgu, corrupt } => {
            commands::gradcheck(dims, seed, cgu == OnOff::On, corrupt.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
