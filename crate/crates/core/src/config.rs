//! Resolved harness configuration and its built-in defaults.

use serde::{Deserialize, Serialize};

use crate::rewards::{RewardParams, RewardWeights};

pub const DEFAULT_MAX_TURNS: usize = 8;
pub const DEFAULT_GROUP_CAPACITY: usize = 36;
pub const DEFAULT_HEADER_HEIGHT: u32 = 28;
pub const DEFAULT_ANSWER_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FILTER_ANLS_THRESHOLD: f64 = 0.7;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_CLIP_RANGE: f64 = 0.2;
pub const DEFAULT_EVIDENCE_BETA_SQ: f64 = 2.0;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Reference optimisation settings for the two training stages. They are not
/// consumed by anything in this crate; they travel with the config so that
/// external trainers can read one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingReference {
    pub sft_epochs: u32,
    pub sft_learning_rate: f64,
    pub grpo_epochs: u32,
    pub grpo_learning_rate: f64,
    pub grpo_group_size: usize,
    pub grpo_temperature: f64,
    pub inference_temperature: f64,
    pub difficulty_rollouts: u32,
    pub stratify_proportions: [f64; 3],
}

impl Default for TrainingReference {
    fn default() -> Self {
        Self {
            sft_epochs: 3,
            sft_learning_rate: 3e-6,
            grpo_epochs: 3,
            grpo_learning_rate: 2e-6,
            grpo_group_size: 8,
            grpo_temperature: 1.0,
            inference_temperature: 0.0,
            difficulty_rollouts: 4,
            stratify_proportions: [0.10, 0.70, 0.20],
        }
    }
}

/// Every tunable the harness uses, with defaults. The CLI layers a JSON
/// config file and then flags on top of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub max_turns: usize,
    pub group_capacity: usize,
    pub header_height: u32,
    pub weights: RewardWeights,
    pub answer_threshold: f64,
    pub filter_anls_threshold: f64,
    pub epsilon: f64,
    pub clip_range: f64,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub training: TrainingReference,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            group_capacity: DEFAULT_GROUP_CAPACITY,
            header_height: DEFAULT_HEADER_HEIGHT,
            weights: RewardWeights::default(),
            answer_threshold: DEFAULT_ANSWER_THRESHOLD,
            filter_anls_threshold: DEFAULT_FILTER_ANLS_THRESHOLD,
            epsilon: DEFAULT_EPSILON,
            clip_range: DEFAULT_CLIP_RANGE,
            bm25_k1: BM25_K1,
            bm25_b: BM25_B,
            training: TrainingReference::default(),
        }
    }
}

impl From<&HarnessConfig> for RewardParams {
    fn from(cfg: &HarnessConfig) -> Self {
        Self {
            weights: cfg.weights,
            answer_threshold: cfg.answer_threshold,
            beta_sq: DEFAULT_EVIDENCE_BETA_SQ,
            epsilon: cfg.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: HarnessConfig = serde_json::from_str(r#"{"max_turns": 3}"#).unwrap();
        assert_eq!(cfg.max_turns, 3);
        assert_eq!(cfg.group_capacity, 36);
        assert_eq!(cfg.weights, RewardWeights::default());
    }
}
