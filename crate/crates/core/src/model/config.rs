use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Projection matrices that can carry a LoRA adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl Target {
    pub const ALL: [Target; 7] = [
        Target::Q,
        Target::K,
        Target::V,
        Target::O,
        Target::Gate,
        Target::Up,
        Target::Down,
    ];

    /// Column order of weight-difference reports.
    pub const REPORT_ORDER: [Target; 7] = [
        Target::Down,
        Target::Gate,
        Target::Up,
        Target::K,
        Target::O,
        Target::Q,
        Target::V,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::K => "k",
            Target::V => "v",
            Target::O => "o",
            Target::Gate => "gate",
            Target::Up => "up",
            Target::Down => "down",
        }
    }

    /// `(d_in, d_out)` of the projection.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        match self {
            Target::Q | Target::K | Target::V | Target::O => (cfg.d_model, cfg.d_model),
            Target::Gate | Target::Up => (cfg.d_model, cfg.d_ff),
            Target::Down => (cfg.d_ff, cfg.d_model),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.tag() == s.to_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown LoRA target `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub lora_targets: Vec<Target>,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_blocks: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 512,
            context_len: 128,
            lora_rank: 16,
            lora_alpha: 32.0,
            lora_dropout: 0.05,
            lora_targets: Target::ALL.to_vec(),
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Two blocks of width 8; used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            n_blocks: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 24,
            context_len: 16,
            lora_rank: 2,
            lora_alpha: 4.0,
            lora_dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.lora_rank == 0 {
            return Err(Error::invalid("lora rank must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(Error::invalid("lora dropout must lie in [0, 1)"));
        }
        if self.n_blocks == 0 || self.vocab_size == 0 || self.context_len == 0 || self.d_ff == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn targets_lora(&self, t: Target) -> bool {
        self.lora_targets.contains(&t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lora_rank, 16);
        assert_eq!(c.lora_alpha, 32.0);
        assert_eq!(c.lora_dropout, 0.05);
        assert_eq!(c.lora_targets.len(), 7);
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad_heads = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(bad_heads.validate().is_err());
        let bad_rank = ModelConfig {
            lora_rank: 0,
            ..ModelConfig::default()
        };
        assert!(bad_rank.validate().is_err());
    }

    #[test]
    fn target_serde_is_lowercase() {
        assert_eq!(serde_json::to_string(&Target::Gate).unwrap(), "\"gate\"");
        assert_eq!("Q".parse::<Target>().unwrap(), Target::Q);
    }
}
