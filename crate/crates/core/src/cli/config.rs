use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::RandomMode;
use crate::corpus::{Dimension, Source};
use crate::ensemble::MergeStrategy;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{ExplanationMode, PretrainConfig, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub n: usize,
    pub defect_rate: f64,
    pub score_noise: f64,
    pub min_assessment_words: usize,
    pub source: Source,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            n: 2_500,
            defect_rate: 0.5,
            score_noise: 0.0,
            min_assessment_words: 0,
            source: Source::Synthetic,
        }
    }
}

/// An external judge program speaking the JSON wire contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandJudgeConfig {
    pub id: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgesConfig {
    /// Seed of the built-in mock judges, used when `commands` is empty.
    pub mock_seed: u64,
    /// Probability that a mock judge is off by one raw point.
    pub mock_noise: f64,
    pub mock_ids: Vec<String>,
    pub commands: Vec<CommandJudgeConfig>,
    /// Score merger for the `llm` strategy; a mock when absent.
    pub merger: Option<CommandJudgeConfig>,
    /// Explanation summarizer; a mock when absent.
    pub summarizer: Option<CommandJudgeConfig>,
    pub retry_budget: u32,
    pub backoff_ms: u64,
    /// Keep records with at least this many judgments instead of failing.
    pub min_judgments: Option<usize>,
}

impl Default for JudgesConfig {
    fn default() -> Self {
        JudgesConfig {
            mock_seed: 0,
            mock_noise: 0.3,
            mock_ids: vec!["judge-a".into(), "judge-b".into(), "judge-c".into()],
            commands: Vec::new(),
            merger: None,
            summarizer: None,
            retry_budget: 2,
            backoff_ms: 250,
            min_judgments: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub per_source: usize,
    pub min_expl_words: usize,
    pub max_pos: usize,
    pub bin_width: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            per_source: 100,
            min_expl_words: 150,
            max_pos: 150,
            bin_width: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub random: Option<RandomMode>,
    pub dictionary: Option<PathBuf>,
    pub dictionary_sha256: Option<String>,
    pub stopwords: Option<PathBuf>,
    /// Fixed output length; matches each record's original length when absent.
    pub n_words: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub oov_buckets: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { oov_buckets: 16 }
    }
}

/// Everything a run depends on. `seed`, `mode`, `trunc` and `dimension`
/// override the copies inside `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub dimension: Dimension,
    pub mode: ExplanationMode,
    pub trunc: Option<usize>,
    pub merge: MergeStrategy,
    pub fixture: FixtureConfig,
    pub judges: JudgesConfig,
    pub mix: MixConfig,
    pub augment: AugmentConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub strict_schema: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            dimension: Dimension::Naturalness,
            mode: ExplanationMode::None,
            trunc: None,
            merge: MergeStrategy::Average,
            fixture: FixtureConfig::default(),
            judges: JudgesConfig::default(),
            mix: MixConfig::default(),
            augment: AugmentConfig::default(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::toy(),
            pretrain: PretrainConfig::default(),
            strict_schema: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fields absent from `text` take their values from `Default`, at any
    /// depth, so a partial `train` object keeps the toy settings.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut merged = serde_json::to_value(ExperimentConfig::default())?;
        overlay(&mut merged, serde_json::from_str(text)?);
        let cfg: ExperimentConfig = serde_json::from_value(merged)?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "config schema version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            mode: self.mode,
            trunc: self.trunc,
            dimension: self.dimension,
            ..self.train.clone()
        }
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_objects_keep_defaults() {
        let cfg =
            ExperimentConfig::from_json(r#"{"train": {"epochs": 1, "optimizer": {"weight_decay": 0.5}}}"#).unwrap();
        let toy = TrainConfig::toy();
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.train.optimizer.lr, toy.optimizer.lr);
        assert_eq!(cfg.train.optimizer.weight_decay, 0.5);
        assert_eq!(cfg.train.train_size, toy.train_size);
    }

    #[test]
    fn unknown_and_mistyped_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"train": {"epoch": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seed": "x"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }
}
