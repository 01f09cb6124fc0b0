//! Group-relative advantages and the clipped surrogate objective.

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::agent::EpisodeResult;
use crate::geodesy::{distance_km, reward_of_distance, GeoPoint};

pub const DEFAULT_GROUP_SIZE: usize = 8;
/// Damping added to the group standard deviation.
pub const ADVANTAGE_EPSILON: f64 = 1e-6;
pub const DEFAULT_CLIP: f64 = 0.2;
pub const DEFAULT_KL_PENALTY: f64 = 0.001;

/// Normalise each reward against its group: `(r - mean) / (std + epsilon)`,
/// with the population standard deviation.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RlError> {
    if rewards.len() < 2 {
        return Err(RlError::InvalidInput(format!("group needs at least 2 rewards, got {}", rewards.len())));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(RlError::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(RlError::InvalidInput(format!("non-finite reward {r}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub epsilon: f64,
}

impl RolloutGroup {
    pub fn new(rewards: Vec<f64>, epsilon: f64) -> Result<Self, RlError> {
        let advantages = group_advantages(&rewards, epsilon)?;
        Ok(Self { rewards, advantages, epsilon })
    }
}

/// Score a group of rollouts for the same image. Rollouts without a
/// prediction earn 0.
pub fn reward_group_from_episodes(
    results: &[EpisodeResult],
    truth: GeoPoint,
    group_size: usize,
) -> Result<RolloutGroup, RlError> {
    if results.len() != group_size {
        return Err(RlError::GroupSize { expected: group_size, got: results.len() });
    }
    let rewards = results
        .iter()
        .map(|r| match r.prediction {
            Some(p) => reward_of_distance(distance_km(p, truth)).map_err(|e| RlError::InvalidInput(e.to_string())),
            None => Ok(0.0),
        })
        .collect::<Result<Vec<_>, _>>()?;
    RolloutGroup::new(rewards, ADVANTAGE_EPSILON)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateInputs {
    /// New over old likelihood for each rollout.
    pub ratios: Vec<f64>,
    pub advantages: Vec<f64>,
    pub clip: f64,
    pub kl_penalty: f64,
    /// Estimated divergence from the reference policy.
    pub kl_value: f64,
}

impl SurrogateInputs {
    /// Default clip and penalty, zero divergence.
    pub fn new(ratios: Vec<f64>, advantages: Vec<f64>) -> Self {
        Self { ratios, advantages, clip: DEFAULT_CLIP, kl_penalty: DEFAULT_KL_PENALTY, kl_value: 0.0 }
    }

    pub fn with_kl(mut self, kl_value: f64) -> Self {
        self.kl_value = kl_value;
        self
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }

    fn validate(&self) -> Result<(), RlError> {
        if self.ratios.is_empty() || self.ratios.len() != self.advantages.len() {
            return Err(RlError::InvalidInput(format!(
                "need equal nonempty ratio and advantage lists, got {} and {}",
                self.ratios.len(),
                self.advantages.len()
            )));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(RlError::InvalidInput(format!("ratios must be positive and finite, got {r}")));
        }
        if self.advantages.iter().any(|a| !a.is_finite()) {
            return Err(RlError::InvalidInput("non-finite advantage".into()));
        }
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !nonneg(self.clip) || !nonneg(self.kl_penalty) || !nonneg(self.kl_value) {
            return Err(RlError::InvalidInput(format!(
                "clip, kl_penalty and kl_value must be nonnegative (got {}, {}, {})",
                self.clip, self.kl_penalty, self.kl_value
            )));
        }
        Ok(())
    }
}

/// Mean over rollouts of `min(ratio * A, clip(ratio) * A)`, minus the
/// divergence penalty. Applied per rollout, not per token.
pub fn surrogate_objective(inp: &SurrogateInputs) -> Result<f64, RlError> {
    inp.validate()?;
    let (lo, hi) = (1.0 - inp.clip, 1.0 + inp.clip);
    let total: f64 = inp
        .ratios
        .iter()
        .zip(&inp.advantages)
        .map(|(&rho, &a)| (rho * a).min(rho.clamp(lo, hi) * a))
        .sum();
    Ok(total / inp.ratios.len() as f64 - inp.kl_penalty * inp.kl_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Termination;
    use crate::protocol::Trajectory;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hand_computed_groups() {
        assert_eq!(group_advantages(&[1.0; 8], ADVANTAGE_EPSILON).unwrap(), vec![0.0; 8]);
        let a = group_advantages(&[1.0, 0.0], ADVANTAGE_EPSILON).unwrap();
        assert!(close(a[0], 1.0, 1e-4) && close(a[1], -1.0, 1e-4), "{a:?}");
        let mut r = vec![0.0; 7];
        r.push(1.0);
        let a = group_advantages(&r, ADVANTAGE_EPSILON).unwrap();
        // mean 1/8, population std sqrt(7)/8
        let sd = 7f64.sqrt() / 8.0;
        assert!(close(a[7], 0.875 / sd, 1e-5));
        assert!(close(a[7], 2.6458, 1e-3));
        assert!(a[..7].iter().all(|&x| close(x, -0.3780, 1e-3)));
    }

    #[test]
    fn short_or_bad_groups() {
        assert!(group_advantages(&[], ADVANTAGE_EPSILON).is_err());
        assert!(group_advantages(&[1.0], ADVANTAGE_EPSILON).is_err());
        assert!(group_advantages(&[1.0, f64::NAN], ADVANTAGE_EPSILON).is_err());
        assert!(group_advantages(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn worked_surrogate_cases() {
        let adv = vec![0.3, -1.2, 0.9];
        let mean = adv.iter().sum::<f64>() / 3.0;
        let v = surrogate_objective(&SurrogateInputs::new(vec![1.0; 3], adv)).unwrap();
        assert!(close(v, mean, 1e-12));
        let v = surrogate_objective(&SurrogateInputs::new(vec![1.5], vec![1.0])).unwrap();
        assert!(close(v, 1.2, 1e-12));
        let v = surrogate_objective(&SurrogateInputs::new(vec![0.5], vec![-1.0])).unwrap();
        assert!(close(v, -0.8, 1e-12));
    }

    #[test]
    fn surrogate_rejects_bad_input() {
        assert!(surrogate_objective(&SurrogateInputs::new(vec![0.0], vec![1.0])).is_err());
        assert!(surrogate_objective(&SurrogateInputs::new(vec![-1.0], vec![1.0])).is_err());
        assert!(surrogate_objective(&SurrogateInputs::new(vec![1.0, 1.0], vec![1.0])).is_err());
        assert!(surrogate_objective(&SurrogateInputs::new(vec![], vec![])).is_err());
        assert!(surrogate_objective(&SurrogateInputs::new(vec![1.0], vec![1.0]).with_kl(-0.1)).is_err());
    }

    fn episode(prediction: Option<GeoPoint>) -> EpisodeResult {
        EpisodeResult {
            trajectory: Trajectory::new("x", None),
            prediction,
            termination: if prediction.is_some() { Termination::Answered } else { Termination::TurnCapExceeded },
            tool_events: Vec::new(),
            model_turns: 1,
            error: None,
        }
    }

    fn north(p: GeoPoint, km: f64) -> GeoPoint {
        GeoPoint::new(p.lat() + (km / 6371.0).to_degrees(), p.lon()).unwrap()
    }

    #[test]
    fn rewards_from_episodes() {
        let t = GeoPoint::new(10.0, 20.0).unwrap();
        let g = reward_group_from_episodes(&vec![episode(Some(t)); 8], t, 8).unwrap();
        assert_eq!(g.rewards, vec![1.0; 8]);
        assert_eq!(g.advantages, vec![0.0; 8]);

        let mut eps = vec![episode(Some(t))];
        eps.extend((0..7).map(|_| episode(None)));
        let g = reward_group_from_episodes(&eps, t, 8).unwrap();
        assert_eq!(g.rewards, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let eps: Vec<_> = [0.5, 25.0, 112.5, 500.0].iter().map(|&d| episode(Some(north(t, d)))).collect();
        let g = reward_group_from_episodes(&eps, t, 4).unwrap();
        for (got, want) in g.rewards.iter().zip([1.0, 0.75, 0.475, 0.0]) {
            assert!(close(*got, want, 1e-6), "{got} vs {want}");
        }
        assert!(matches!(reward_group_from_episodes(&eps, t, 8), Err(RlError::GroupSize { expected: 8, got: 4 })));
    }

    fn argmax(xs: &[f64]) -> usize {
        xs.iter().enumerate().fold(0, |best, (i, x)| if *x > xs[best] { i } else { best })
    }

    proptest! {
        #[test]
        fn advantages_center_and_preserve_order(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
            let a = group_advantages(&rewards, ADVANTAGE_EPSILON).unwrap();
            prop_assert_eq!(a.len(), rewards.len());
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            let spread = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - rewards.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-9 {
                prop_assert_eq!(argmax(&a), argmax(&rewards));
                for i in 0..a.len() {
                    for j in 0..a.len() {
                        if rewards[i] < rewards[j] { prop_assert!(a[i] < a[j]); }
                    }
                }
            }
        }

        #[test]
        fn advantages_ignore_shift(rewards in prop::collection::vec(0.0f64..1.0, 2..16), c in -10.0f64..10.0) {
            let a = group_advantages(&rewards, ADVANTAGE_EPSILON).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            let b = group_advantages(&shifted, ADVANTAGE_EPSILON).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }

        #[test]
        fn kl_slope_is_the_penalty(
            pairs in prop::collection::vec((0.01f64..3.0, -3.0f64..3.0), 1..10),
            kl in 0.0f64..10.0,
            dk in 0.0f64..10.0,
        ) {
            let (ratios, adv): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let base = SurrogateInputs::new(ratios, adv);
            let f0 = surrogate_objective(&base.clone().with_kl(kl)).unwrap();
            let f1 = surrogate_objective(&base.clone().with_kl(kl + dk)).unwrap();
            prop_assert!(f1 <= f0);
            prop_assert!(((f0 - f1) - DEFAULT_KL_PENALTY * dk).abs() < 1e-12);
        }

        #[test]
        fn clipped_term_never_exceeds_unclipped(rho in 0.01f64..5.0, a in -5.0f64..5.0) {
            let v = surrogate_objective(&SurrogateInputs::new(vec![rho], vec![a])).unwrap();
            prop_assert!(v <= rho * a + 1e-12);
        }
    }
}
