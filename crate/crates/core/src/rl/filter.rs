//! Pass@K probing, regime labels and the two-phase curriculum.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::RlError;
use crate::agent::{run_batch_sampled, EpisodeInput, EpisodeMode, LoopConfig};
use crate::geodesy::{distance_km, ThresholdLadder};

pub const DEFAULT_TRIALS: usize = 8;
pub const DEFAULT_REGIME_THRESHOLDS_KM: [f64; 4] = [1.0, 25.0, 200.0, 750.0];
/// Thresholds at or below this belong to the strict first phase.
pub const DEFAULT_PHASE_ONE_MAX_KM: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub trials: usize,
    pub regime_thresholds_km: ThresholdLadder,
    pub phase_one_max_km: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            regime_thresholds_km: ThresholdLadder::new(DEFAULT_REGIME_THRESHOLDS_KM.to_vec()).expect("valid default"),
            phase_one_max_km: DEFAULT_PHASE_ONE_MAX_KM,
        }
    }
}

impl FilterConfig {
    pub fn new(trials: usize, thresholds_km: Vec<f64>) -> Result<Self, RlError> {
        let ladder = ThresholdLadder::new(thresholds_km).map_err(|e| RlError::InvalidInput(e.to_string()))?;
        let cfg = Self { trials, regime_thresholds_km: ladder, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.trials < 2 {
            return Err(RlError::InvalidInput(format!("trials must be at least 2, got {}", self.trials)));
        }
        if !(self.phase_one_max_km.is_finite() && self.phase_one_max_km > 0.0) {
            return Err(RlError::InvalidInput(format!("phase_one_max_km must be positive, got {}", self.phase_one_max_km)));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> &[f64] {
        self.regime_thresholds_km.thresholds()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassCount {
    pub threshold_km: f64,
    pub count: usize,
}

/// K trial errors for one image and how many land within each threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub image_id: String,
    /// One entry per trial; `None` is a trial that produced no answer and
    /// counts as infinitely far.
    pub distances_km: Vec<Option<f64>>,
    pub pass_counts: Vec<PassCount>,
}

impl ProbeRecord {
    pub fn from_distances(image_id: impl Into<String>, distances_km: Vec<Option<f64>>, thresholds: &[f64]) -> Self {
        let pass_counts = thresholds
            .iter()
            .map(|&t| PassCount {
                threshold_km: t,
                count: distances_km.iter().filter(|d| matches!(d, Some(d) if *d <= t)).count(),
            })
            .collect();
        Self { image_id: image_id.into(), distances_km, pass_counts }
    }

    pub fn trials(&self) -> usize {
        self.distances_km.len()
    }

    pub fn failures(&self) -> usize {
        self.distances_km.iter().filter(|d| d.is_none()).count()
    }

    pub fn count_at(&self, threshold_km: f64) -> Result<usize, RlError> {
        self.pass_counts
            .iter()
            .find(|p| p.threshold_km == threshold_km)
            .map(|p| p.count)
            .ok_or(RlError::UnknownThreshold(threshold_km))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Intractable,
    Learnable,
    Mastered,
}

pub fn classify_count(count: usize, trials: usize) -> RegimeLabel {
    if count == 0 {
        RegimeLabel::Intractable
    } else if count >= trials {
        RegimeLabel::Mastered
    } else {
        RegimeLabel::Learnable
    }
}

pub fn classify_regime(record: &ProbeRecord, threshold_km: f64) -> Result<RegimeLabel, RlError> {
    Ok(classify_count(record.count_at(threshold_km)?, record.trials()))
}

/// Run `cfg.trials` tool-free episodes per input and record their errors.
pub fn probe(
    inputs: &[EpisodeInput],
    loop_cfg: &LoopConfig,
    cfg: &FilterConfig,
    parallelism: usize,
) -> Result<Vec<ProbeRecord>, RlError> {
    cfg.validate()?;
    if let Some(i) = inputs.iter().find(|i| i.ground_truth.is_none()) {
        return Err(RlError::InvalidInput(format!("{} has no ground truth", i.image.id())));
    }
    let groups = run_batch_sampled(inputs, loop_cfg, EpisodeMode::Cot, parallelism, cfg.trials)?;
    Ok(inputs
        .iter()
        .zip(groups)
        .map(|(input, group)| {
            let truth = input.ground_truth.expect("checked above");
            let distances = group.iter().map(|r| r.prediction.map(|p| distance_km(p, truth))).collect();
            ProbeRecord::from_distances(input.image.id(), distances, cfg.thresholds())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    #[serde(flatten)]
    pub record: ProbeRecord,
    pub regimes: Vec<RegimeLabel>,
}

/// Share of images in each regime at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub threshold_km: f64,
    pub mastered: f64,
    pub intractable: f64,
    pub learnable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub trials: usize,
    pub thresholds_km: Vec<f64>,
    pub images: Vec<ProbeEntry>,
    pub summary: Vec<RegimeSummary>,
    /// Trials across all images that produced no answer.
    pub failed_trials: usize,
}

impl ProbeManifest {
    pub fn build(records: &[ProbeRecord], cfg: &FilterConfig) -> Result<Self, RlError> {
        let thresholds = cfg.thresholds().to_vec();
        let mut images = Vec::with_capacity(records.len());
        for r in records {
            let regimes = thresholds.iter().map(|&t| classify_regime(r, t)).collect::<Result<Vec<_>, _>>()?;
            images.push(ProbeEntry { record: r.clone(), regimes });
        }
        let n = images.len().max(1) as f64;
        let summary = thresholds
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let share = |label| images.iter().filter(|e| e.regimes[i] == label).count() as f64 / n;
                RegimeSummary {
                    threshold_km: t,
                    mastered: share(RegimeLabel::Mastered),
                    intractable: share(RegimeLabel::Intractable),
                    learnable: share(RegimeLabel::Learnable),
                }
            })
            .collect();
        Ok(Self {
            trials: cfg.trials,
            thresholds_km: thresholds,
            failed_trials: records.iter().map(ProbeRecord::failures).sum(),
            images,
            summary,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Curriculum {
    pub phase_one: Vec<String>,
    pub phase_two: Vec<String>,
}

#[derive(Serialize)]
struct PhaseLine<'a> {
    phase: u8,
    image_id: &'a str,
}

impl Curriculum {
    /// One JSON line per (phase, image) pair.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (phase, ids) in [(1u8, &self.phase_one), (2u8, &self.phase_two)] {
            for id in ids {
                out.push_str(&serde_json::to_string(&PhaseLine { phase, image_id: id }).expect("plain struct"));
                out.push('\n');
            }
        }
        out
    }
}

/// Phase one keeps images learnable at a strict threshold; phase two adds
/// those learnable at any threshold. Both lists are sorted and unique.
pub fn build_curriculum(records: &[ProbeRecord], cfg: &FilterConfig) -> Result<Curriculum, RlError> {
    let mut one = BTreeSet::new();
    let mut two = BTreeSet::new();
    for r in records {
        for &t in cfg.thresholds() {
            if classify_regime(r, t)? == RegimeLabel::Learnable {
                two.insert(r.image_id.clone());
                if t <= cfg.phase_one_max_km {
                    one.insert(r.image_id.clone());
                }
            }
        }
    }
    Ok(Curriculum { phase_one: one.into_iter().collect(), phase_two: two.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIXTURE: [f64; 8] = [0.5, 2.0, 30.0, 30.0, 100.0, 300.0, 900.0, 900.0];

    fn rec(id: &str, d: &[f64]) -> ProbeRecord {
        ProbeRecord::from_distances(id, d.iter().map(|&x| Some(x)).collect(), &DEFAULT_REGIME_THRESHOLDS_KM)
    }

    #[test]
    fn hand_counted_fixture() {
        let r = rec("a", &FIXTURE);
        let counts: Vec<_> = r.pass_counts.iter().map(|p| p.count).collect();
        assert_eq!(counts, [1, 2, 5, 6]);
        assert_eq!(r.count_at(200.0).unwrap(), 5);
        assert!(matches!(r.count_at(5.0), Err(RlError::UnknownThreshold(_))));
        assert!(matches!(classify_regime(&r, 5.0), Err(RlError::UnknownThreshold(_))));
    }

    #[test]
    fn extremes() {
        let r = rec("a", &[0.0; 8]);
        assert!(r.pass_counts.iter().all(|p| p.count == 8));
        let r = ProbeRecord::from_distances("b", vec![None; 8], &DEFAULT_REGIME_THRESHOLDS_KM);
        assert!(r.pass_counts.iter().all(|p| p.count == 0));
        assert_eq!(r.failures(), 8);
    }

    #[test]
    fn regime_labels() {
        assert_eq!(classify_count(0, 8), RegimeLabel::Intractable);
        assert_eq!(classify_count(8, 8), RegimeLabel::Mastered);
        assert_eq!(classify_count(3, 8), RegimeLabel::Learnable);
        for c in 0..=8 {
            let label = classify_count(c, 8);
            assert_eq!(label == RegimeLabel::Learnable, 0 < c && c < 8);
            assert_eq!(label == RegimeLabel::Intractable, c == 0);
            assert_eq!(label == RegimeLabel::Mastered, c == 8);
        }
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let r = rec("a", &[25.0, 26.0]);
        assert_eq!(r.count_at(25.0).unwrap(), 1);
    }

    #[test]
    fn curriculum_examples() {
        let cfg = FilterConfig::default();
        // learnable only at 750: passes 750 sometimes, never tighter
        let loose = rec("loose", &[700.0, 800.0, 800.0, 800.0, 800.0, 800.0, 800.0, 800.0]);
        // learnable at 1 and at 200
        let both = rec("both", &[0.5, 30.0, 30.0, 30.0, 30.0, 30.0, 30.0, 300.0]);
        let cur = build_curriculum(&[loose.clone(), both.clone()], &cfg).unwrap();
        assert_eq!(cur.phase_one, ["both"]);
        assert_eq!(cur.phase_two, ["both", "loose"]);
        assert_eq!(classify_regime(&both, 25.0).unwrap(), RegimeLabel::Learnable);

        let cur = build_curriculum(&[], &cfg).unwrap();
        assert_eq!(cur, Curriculum::default());

        let mastered = rec("m", &[0.1; 8]);
        let cur = build_curriculum(&[mastered, both.clone(), both], &cfg).unwrap();
        assert_eq!(cur.phase_two, ["both"]);
        assert_eq!(cur.to_jsonl(), "{\"phase\":1,\"image_id\":\"both\"}\n{\"phase\":2,\"image_id\":\"both\"}\n");
    }

    #[test]
    fn config_guards() {
        assert!(FilterConfig::new(1, vec![1.0, 25.0]).is_err());
        assert!(FilterConfig::new(8, vec![25.0, 1.0]).is_err());
        assert!(FilterConfig::new(2, vec![5.0]).is_ok());
        let c: FilterConfig = serde_json::from_value(serde_json::json!({"trials": 4})).unwrap();
        assert_eq!(c.thresholds(), DEFAULT_REGIME_THRESHOLDS_KM);
        assert!(serde_json::from_value::<FilterConfig>(serde_json::json!({"k": 4})).is_err());
    }

    #[test]
    fn manifest_summary() {
        let cfg = FilterConfig::default();
        let records = vec![rec("a", &FIXTURE), rec("b", &[0.0; 8])];
        let m = ProbeManifest::build(&records, &cfg).unwrap();
        assert_eq!(m.summary[0].mastered, 0.5);
        assert_eq!(m.summary[0].learnable, 0.5);
        assert_eq!(m.images[0].regimes, vec![RegimeLabel::Learnable; 4]);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<ProbeManifest>(&text).unwrap(), m);
    }

    proptest! {
        #[test]
        fn counts_match_brute_force(d in prop::collection::vec(prop::option::of(0.0f64..2000.0), 2..12)) {
            let r = ProbeRecord::from_distances("p", d.clone(), &DEFAULT_REGIME_THRESHOLDS_KM);
            let mut prev = 0;
            for (i, &t) in DEFAULT_REGIME_THRESHOLDS_KM.iter().enumerate() {
                let mut brute = 0;
                for x in d.iter().flatten() {
                    if *x <= t { brute += 1; }
                }
                prop_assert_eq!(r.pass_counts[i].count, brute);
                prop_assert!(brute >= prev);
                prev = brute;
            }
        }

        #[test]
        fn phase_one_within_phase_two(
            sets in prop::collection::vec(prop::collection::vec(prop::option::of(0.0f64..2000.0), 8), 0..20)
        ) {
            let records: Vec<_> = sets
                .into_iter()
                .enumerate()
                .map(|(i, d)| ProbeRecord::from_distances(format!("i{i}"), d, &DEFAULT_REGIME_THRESHOLDS_KM))
                .collect();
            let cur = build_curriculum(&records, &FilterConfig::default()).unwrap();
            for id in &cur.phase_one {
                prop_assert!(cur.phase_two.binary_search(id).is_ok());
            }
            prop_assert!(cur.phase_two.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
