//! TOML run files: what to train on, the model shape, the optimiser
//! settings and, in a manifest, where the inputs came from.

use std::path::{Path, PathBuf};

use exlab::generation::{SamplerSpec, Strategy};
use exlab::{Error, ModelConfig, Result, SublayerKind, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub sublayer: SublayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    pub context_len: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_eps")]
    pub layernorm_eps: f64,
}

fn one() -> usize {
    1
}

fn default_eps() -> f64 {
    exlab::config::DEFAULT_LAYERNORM_EPS
}

impl ModelSection {
    /// The model configuration for a vocabulary of `vocab_len` tokens.
    pub fn resolve(&self, vocab_len: usize) -> Result<ModelConfig> {
        if let Some(u) = self.vocab_size {
            if u != vocab_len {
                return Err(Error::Config(format!(
                    "run file asks for vocab_size {u} but the vocabulary has {vocab_len} tokens"
                )));
            }
        }
        let cfg = ModelConfig {
            sublayer: self.sublayer,
            vocab_size: vocab_len,
            context_len: self.context_len,
            model_dim: self.model_dim,
            ffn_dim: self.ffn_dim,
            layers: self.layers,
            heads: self.heads,
            dropout: self.dropout,
            layernorm_eps: self.layernorm_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SamplerSection {
    pub fn spec(&self) -> Result<SamplerSpec> {
        let strategy = match (self.top_p, self.top_k) {
            (Some(_), Some(_)) => return Err(Error::Config("set either top_p or top_k, not both".into())),
            (Some(p), None) => Strategy::TopP { p },
            (None, Some(k)) => Strategy::TopK { k },
            (None, None) => Strategy::Greedy,
        };
        Ok(SamplerSpec {
            strategy,
            seed: self.seed.unwrap_or(0),
        })
    }
}

/// Where a run's inputs came from; filled in when a manifest is written.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub corpus_sha256: String,
    pub vocab_sha256: String,
    pub stream_tokens: usize,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    /// Directory of cleaned `.txt` documents.
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("run file: {}", e.message().trim())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise run file: {e}")))
    }

    /// Parse `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rf = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut rf.corpus, &mut rf.vocab, &mut rf.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(rf)
    }
}
