//! Training-side utilities: the SFT trajectory filter, masked NLL,
//! difficulty stratification, and GRPO advantages and objective. A small
//! softmax policy with analytic gradients serves as a fixture for checking
//! the objectives.

mod filter;
mod grpo;
mod stratify;
mod toy;

pub use filter::{filter_trajectory, filter_trajectory_with, FilterDecision, FilterReason, FilterScores, JudgeHook};
pub use grpo::{
    group_advantages, grpo_batch_objective, grpo_objective, masked_nll, GroupRecord, TokenBatch, TokenSeq, TrainError,
};
pub use stratify::{
    count_successes, difficulty_bucket, stratified_sample, target_counts, BucketThresholds, Difficulty,
    StratifiedSample,
};
pub use toy::{ToyPolicy, ToySequence};
