//! Rejection sampling over synthesized trajectories.

use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::geodesy::{distance_km, GeoPoint};
use crate::protocol::{Action, Trajectory};
use crate::tools::{failure_class, observation_status, FailureClass, ObservationStatus};

pub const DEFAULT_DISTANCE_THRESHOLD_KM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    pub distance_threshold_km: f64,
    pub require_all_tools_valid: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { distance_threshold_km: DEFAULT_DISTANCE_THRESHOLD_KM, require_all_tools_valid: true }
    }
}

impl CurationConfig {
    pub fn new(distance_threshold_km: f64, require_all_tools_valid: bool) -> Result<Self, DatagenError> {
        let cfg = Self { distance_threshold_km, require_all_tools_valid };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if !(self.distance_threshold_km.is_finite() && self.distance_threshold_km > 0.0) {
            return Err(DatagenError::InvalidConfig(format!(
                "distance threshold must be positive, got {}",
                self.distance_threshold_km
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    InvalidToolCall,
    ToolExecutionFailed,
    NoFinalAnswer,
    DistanceExceeded { km: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub image_id: String,
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
    /// Error of the final prediction, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
}

/// Decide whether `trajectory` belongs in the curated set.
///
/// Tool validity is read back from the recorded observations, so a persisted
/// record curates exactly as the live episode did. An observation that does
/// not carry a status cannot prove success and counts as a failed execution.
pub fn curate(trajectory: &Trajectory, truth: GeoPoint, cfg: &CurationConfig) -> CurationDecision {
    let mut invalid = false;
    let mut failed = false;
    for step in &trajectory.steps {
        if !matches!(step.action, Action::ToolCall(_)) {
            continue;
        }
        match step.observation.as_deref().map(observation_status) {
            Some(ObservationStatus::Ok) => {}
            Some(ObservationStatus::Error { kind }) => match failure_class(&kind) {
                FailureClass::InvalidCall => invalid = true,
                FailureClass::ExecutionFailed => failed = true,
            },
            Some(ObservationStatus::Unrecognized) | None => failed = true,
        }
    }

    let mut reasons = Vec::new();
    if cfg.require_all_tools_valid {
        if invalid {
            reasons.push(RejectReason::InvalidToolCall);
        }
        if failed {
            reasons.push(RejectReason::ToolExecutionFailed);
        }
    }
    let distance = trajectory.prediction().map(|p| distance_km(p, truth));
    match distance {
        None => reasons.push(RejectReason::NoFinalAnswer),
        Some(d) if d < cfg.distance_threshold_km => {}
        Some(d) => reasons.push(RejectReason::DistanceExceeded { km: d }),
    }
    CurationDecision {
        image_id: trajectory.image_id.clone(),
        accepted: reasons.is_empty(),
        reasons,
        distance_km: distance,
    }
}

/// Curate against the ground truth stored on the trajectory itself.
pub fn curate_stored(trajectory: &Trajectory, cfg: &CurationConfig) -> Result<CurationDecision, DatagenError> {
    let truth = trajectory
        .ground_truth
        .ok_or_else(|| DatagenError::MissingGroundTruth(trajectory.image_id.clone()))?;
    Ok(curate(trajectory, truth, cfg))
}
