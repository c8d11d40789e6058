use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token-mixing sublayer used in every layer of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SublayerKind {
    Attention,
    She,
    He,
    We,
    Me,
}

impl SublayerKind {
    pub const ALL: [SublayerKind; 5] = [
        SublayerKind::Attention,
        SublayerKind::She,
        SublayerKind::He,
        SublayerKind::We,
        SublayerKind::Me,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SublayerKind::Attention => "attention",
            SublayerKind::She => "she",
            SublayerKind::He => "he",
            SublayerKind::We => "we",
            SublayerKind::Me => "me",
        }
    }
}

impl fmt::Display for SublayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SublayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SublayerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sublayer kind `{s}`")))
    }
}

pub const DEFAULT_LAYERNORM_EPS: f64 = 1e-5;

fn default_eps() -> f64 {
    DEFAULT_LAYERNORM_EPS
}

fn default_heads() -> usize {
    1
}

/// Shape hyperparameters of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sublayer: SublayerKind,
    pub vocab_size: usize,
    pub context_len: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_eps")]
    pub layernorm_eps: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        for (name, v) in [
            ("context_len", self.context_len),
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("layers", self.layers),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.model_dim < 2 {
            return bad("model_dim must be at least 2 for layer normalisation".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.layernorm_eps > 0.0 && self.layernorm_eps.is_finite()) {
            return bad(format!("layernorm_eps must be positive, got {}", self.layernorm_eps));
        }
        if self.sublayer == SublayerKind::Attention && self.model_dim % self.heads != 0 {
            return bad(format!(
                "heads ({}) must divide model_dim ({})",
                self.heads, self.model_dim
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}
