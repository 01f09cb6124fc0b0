//! Benchmark reports: Accuracy@D, termination counts and tool-usage
//! analytics, rendered as a table, JSON or CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{EpisodeResult, Termination};
use crate::geodesy::{accuracy_from_distances, distance_km, GeoPoint, ThresholdLadder};

/// Combination bucket for episodes that attempted no tool.
pub const NO_TOOL_BUCKET: &str = "none";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{results} results but {truths} ground truths")]
    LengthMismatch { results: usize, truths: usize },
    #[error("no results to report on")]
    Empty,
    #[error("cannot decode report: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    pub threshold_km: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub image_id: String,
    pub termination: Termination,
    /// `None` when the episode gave no answer.
    pub distance_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub answered: usize,
    pub accuracy: Vec<ThresholdAccuracy>,
    pub termination_histogram: BTreeMap<Termination, usize>,
    /// Over answered episodes only.
    pub mean_distance_km: Option<f64>,
    pub median_distance_km: Option<f64>,
    pub episodes: Vec<EpisodeScore>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Unanswered episodes stay in the denominator and miss at every threshold.
pub fn build_eval_report(
    results: &[EpisodeResult],
    truths: &[GeoPoint],
    ladder: &ThresholdLadder,
) -> Result<EvalReport, EvalError> {
    if results.len() != truths.len() {
        return Err(EvalError::LengthMismatch { results: results.len(), truths: truths.len() });
    }
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let episodes: Vec<EpisodeScore> = results
        .iter()
        .zip(truths)
        .map(|(r, t)| EpisodeScore {
            image_id: r.image_id().to_string(),
            termination: r.termination,
            distance_km: r.prediction.map(|p| distance_km(p, *t)),
        })
        .collect();
    let mut distances: Vec<f64> = episodes.iter().filter_map(|e| e.distance_km).collect();
    let accuracy = ladder
        .thresholds()
        .iter()
        .zip(accuracy_from_distances(&distances, results.len(), ladder))
        .map(|(&threshold_km, accuracy)| ThresholdAccuracy { threshold_km, accuracy })
        .collect();
    let mut termination_histogram = BTreeMap::new();
    for r in results {
        *termination_histogram.entry(r.termination).or_insert(0) += 1;
    }
    distances.sort_by(f64::total_cmp);
    let mean_distance_km =
        (!distances.is_empty()).then(|| distances.iter().sum::<f64>() / distances.len() as f64);
    Ok(EvalReport {
        n: results.len(),
        answered: distances.len(),
        accuracy,
        termination_histogram,
        mean_distance_km,
        median_distance_km: median(&distances),
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStats {
    pub attempts: usize,
    pub successes: usize,
    /// Attempts per episode.
    pub call_rate: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsageReport {
    pub episodes: usize,
    pub tool_using_episodes: usize,
    /// Share of all episodes per tool combination, including the no-tool
    /// bucket.
    pub combinations: BTreeMap<String, f64>,
    /// Share of tool-using episodes per combination.
    pub combinations_among_tool_users: BTreeMap<String, f64>,
    pub tools: BTreeMap<String, ToolStats>,
}

fn combination_key(names: &BTreeSet<&str>) -> String {
    if names.is_empty() {
        NO_TOOL_BUCKET.to_string()
    } else {
        names.iter().copied().collect::<Vec<_>>().join("+")
    }
}

/// A combination is the set of tool names an episode attempted, successful
/// or not.
pub fn build_tool_usage_report(results: &[EpisodeResult]) -> Result<ToolUsageReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_tool: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let names: BTreeSet<&str> = r.tool_events.iter().map(|e| e.tool.as_str()).collect();
        *counts.entry(combination_key(&names)).or_insert(0) += 1;
        for e in &r.tool_events {
            let slot = per_tool.entry(e.tool.clone()).or_insert((0, 0));
            slot.0 += 1;
            slot.1 += usize::from(e.success);
        }
    }
    let n = results.len();
    let users = n - counts.get(NO_TOOL_BUCKET).copied().unwrap_or(0);
    let combinations = counts.iter().map(|(k, &c)| (k.clone(), c as f64 / n as f64)).collect();
    let combinations_among_tool_users = counts
        .iter()
        .filter(|(k, _)| k.as_str() != NO_TOOL_BUCKET)
        .map(|(k, &c)| (k.clone(), c as f64 / users as f64))
        .collect();
    let tools = per_tool
        .into_iter()
        .map(|(name, (attempts, successes))| {
            let stats = ToolStats {
                attempts,
                successes,
                call_rate: attempts as f64 / n as f64,
                success_rate: successes as f64 / attempts as f64,
            };
            (name, stats)
        })
        .collect();
    Ok(ToolUsageReport { episodes: n, tool_using_episodes: users, combinations, combinations_among_tool_users, tools })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(Self::Table),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format `{other}` (table, json, csv)")),
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

pub fn render_eval(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => pretty(report),
        ReportFormat::Csv => {
            let mut s = String::from("threshold_km,accuracy\n");
            for a in &report.accuracy {
                writeln!(s, "{},{}", a.threshold_km, a.accuracy).unwrap();
            }
            s
        }
        ReportFormat::Table => {
            let mut s = String::new();
            writeln!(s, "episodes: {}  answered: {}", report.n, report.answered).unwrap();
            writeln!(s, "{:>14}  {:>8}", "threshold_km", "accuracy").unwrap();
            for a in &report.accuracy {
                writeln!(s, "{:>14}  {:>7.2}%", a.threshold_km, a.accuracy * 100.0).unwrap();
            }
            writeln!(
                s,
                "distance_km  mean: {}  median: {}",
                opt(report.mean_distance_km),
                opt(report.median_distance_km)
            )
            .unwrap();
            for (t, c) in &report.termination_histogram {
                let name = serde_json::to_value(t).unwrap();
                writeln!(s, "{:>18}: {c}", name.as_str().unwrap_or_default()).unwrap();
            }
            s
        }
    }
}

pub fn render_usage(report: &ToolUsageReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => pretty(report),
        ReportFormat::Csv => {
            let mut s = String::from("tool,attempts,successes,call_rate,success_rate\n");
            for (name, t) in &report.tools {
                writeln!(s, "{name},{},{},{},{}", t.attempts, t.successes, t.call_rate, t.success_rate).unwrap();
            }
            s
        }
        ReportFormat::Table => {
            let mut s = String::new();
            writeln!(s, "episodes: {}  using tools: {}", report.episodes, report.tool_using_episodes).unwrap();
            writeln!(s, "{:<40} {:>8} {:>8}", "combination", "all", "users").unwrap();
            for (k, v) in &report.combinations {
                let users = report.combinations_among_tool_users.get(k).map_or("-".to_string(), |u| format!("{:.1}%", u * 100.0));
                writeln!(s, "{k:<40} {:>7.1}% {users:>8}", v * 100.0).unwrap();
            }
            writeln!(s, "{:<20} {:>8} {:>9} {:>9}", "tool", "attempts", "per_ep", "success").unwrap();
            for (name, t) in &report.tools {
                writeln!(s, "{name:<20} {:>8} {:>9.3} {:>8.1}%", t.attempts, t.call_rate, t.success_rate * 100.0).unwrap();
            }
            s
        }
    }
}

pub fn parse_eval_json(text: &str) -> Result<EvalReport, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::Decode(e.to_string()))
}

pub fn parse_usage_json(text: &str) -> Result<ToolUsageReport, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::Decode(e.to_string()))
}
