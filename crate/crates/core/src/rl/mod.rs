//! RL data selection and policy-gradient arithmetic.
//!
//! Everything here is a pure function of its inputs except [`probe`], which
//! runs episodes.

mod filter;
mod grpo;

use thiserror::Error;

use crate::agent::AgentError;

pub use filter::{
    build_curriculum, classify_count, classify_regime, probe, Curriculum, FilterConfig, PassCount, ProbeEntry,
    ProbeManifest, ProbeRecord, RegimeLabel, RegimeSummary, DEFAULT_PHASE_ONE_MAX_KM, DEFAULT_REGIME_THRESHOLDS_KM,
    DEFAULT_TRIALS,
};
pub use grpo::{
    group_advantages, reward_group_from_episodes, surrogate_objective, RolloutGroup, SurrogateInputs,
    ADVANTAGE_EPSILON, DEFAULT_CLIP, DEFAULT_GROUP_SIZE, DEFAULT_KL_PENALTY,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("threshold {0} km is not in the record")]
    UnknownThreshold(f64),
    #[error("expected a group of {expected} episodes, got {got}")]
    GroupSize { expected: usize, got: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
}
