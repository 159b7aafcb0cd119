//! Run configuration: built-in defaults, overridden by a JSON file,
//! overridden by command-line flags.

use std::path::Path;

use cgsum::data::TokenizeMode;
use cgsum::inference::DEFAULT_BEAM;
use cgsum::model::ModelConfig;
use cgsum::trainer::TrainConfig;
use cgsum::{DType, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub emb_dim: usize,
    pub hidden: usize,
    pub cgu_enabled: bool,
    /// CGU branch width; defaults to `hidden` (half of d_h).
    pub d_b: Option<usize>,
    pub max_tgt_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelConfig::full_size(1, 1);
        ModelSection {
            emb_dim: p.emb_dim,
            hidden: p.hidden,
            cgu_enabled: p.cgu_enabled,
            d_b: None,
            max_tgt_len: p.max_tgt_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub tokenize: TokenizeMode,
    /// Vocabulary caps, reserved ids included; `None` uses the tokenizer's
    /// default.
    pub src_vocab_size: Option<usize>,
    pub tgt_vocab_size: Option<usize>,
    pub min_freq: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { tokenize: TokenizeMode::Whitespace, src_vocab_size: None, tgt_vocab_size: None, min_freq: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub beam: usize,
    pub max_len: usize,
    pub length_norm: bool,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { beam: DEFAULT_BEAM, max_len: 100, length_norm: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dtype: DType,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub generate: GenerateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            dtype: DType::F32,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            data: DataSection::default(),
            generate: GenerateSection::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cgu: Option<bool>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub beam: Option<usize>,
    pub max_len: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(c) = ov.cgu {
            self.model.cgu_enabled = c;
        }
        if let Some(lr) = ov.lr {
            self.train.lr = lr;
        }
        if let Some(e) = ov.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = ov.batch_size {
            self.train.batch_size = b;
        }
        if let Some(b) = ov.beam {
            self.generate.beam = b;
        }
        if let Some(m) = ov.max_len {
            self.generate.max_len = m;
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config(5, 5).validate()?;
        if self.generate.beam == 0 || self.generate.max_len == 0 {
            return Err(Error::Config("beam and max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, src_vocab_size: usize, tgt_vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            src_vocab_size,
            tgt_vocab_size,
            emb_dim: m.emb_dim,
            hidden: m.hidden,
            cgu_enabled: m.cgu_enabled,
            d_b: m.d_b.unwrap_or(m.hidden),
            seed: self.seed,
            max_tgt_len: m.max_tgt_len,
        }
    }

    pub fn vocab_caps(&self) -> (usize, usize) {
        let d = self.data.tokenize.default_vocab_size();
        (self.data.src_vocab_size.unwrap_or(d), self.data.tgt_vocab_size.unwrap_or(d))
    }
}
