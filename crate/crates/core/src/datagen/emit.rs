//! Dataset emission: curated trajectory records, chat-format training
//! records with supervision masks, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curate::{curate_stored, CurationConfig, CurationDecision, RejectReason};
use super::DatagenError;
use crate::agent::{Role, COT_SYSTEM_PROMPT, PROMPT_VERSION, TASK_MESSAGE};
use crate::geodesy::GeoPoint;
use crate::protocol::{render_steps, serialize_trajectory, FinalAnswer, Step, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: Role,
    pub content: String,
    /// Whether this message contributes to the training loss.
    pub supervised: bool,
}

impl SftMessage {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into(), supervised: role == Role::Assistant }
    }
}

/// One chat-format training example. Only assistant messages are
/// supervised.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub image_id: String,
    pub messages: Vec<SftMessage>,
}

impl SftRecord {
    /// The task text shown to the model.
    pub fn prompt(&self) -> Option<&str> {
        self.messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }

    /// The final supervised message.
    pub fn target(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.supervised).map(|m| m.content.as_str())
    }

    pub fn supervision_mask(&self) -> Vec<bool> {
        self.messages.iter().map(|m| m.supervised).collect()
    }
}

/// Lay a trajectory out as alternating assistant and tool messages.
pub fn trajectory_to_chat(trajectory: &Trajectory, system_prompt: &str) -> SftRecord {
    let mut messages = vec![SftMessage::new(Role::System, system_prompt), SftMessage::new(Role::User, TASK_MESSAGE)];
    for step in &trajectory.steps {
        let bare = Step { observation: None, ..step.clone() };
        messages.push(SftMessage::new(Role::Assistant, render_steps(std::slice::from_ref(&bare))));
        if let Some(obs) = &step.observation {
            messages.push(SftMessage::new(Role::Tool, format!("<tool_response>{obs}</tool_response>")));
        }
    }
    SftRecord { image_id: trajectory.image_id.clone(), messages }
}

/// Visual QA record for one labelled image: the answer is the coordinate
/// pair alone.
pub fn sft_record(image_id: &str, point: GeoPoint) -> SftRecord {
    let answer = FinalAnswer::new(None, None, point);
    SftRecord {
        image_id: image_id.to_string(),
        messages: vec![
            SftMessage::new(Role::System, COT_SYSTEM_PROMPT.trim_end()),
            SftMessage::new(Role::User, TASK_MESSAGE),
            SftMessage::new(Role::Assistant, format!("<answer>{}</answer>", answer.render())),
        ],
    }
}

/// Write one JSON line per pair; returns the number of records written.
pub fn emit_sft_dataset<W: Write>(pairs: &[(String, GeoPoint)], out: &mut W) -> Result<usize, DatagenError> {
    for (id, point) in pairs {
        let line = serde_json::to_string(&sft_record(id, *point)).map_err(|e| DatagenError::Encode(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(pairs.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub raw: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub acceptance_rate: f64,
    /// How many rejected trajectories carried each reason.
    pub reject_reasons: BTreeMap<String, usize>,
    /// Episodes that never produced a trajectory (observer or planner
    /// failures before curation).
    #[serde(default)]
    pub synthesis_failures: usize,
    pub prompt_version: String,
    pub config: CurationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub decision: CurationDecision,
    pub record: String,
}

/// Everything a cold-start run produces, kept in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartDataset {
    /// Accepted trajectories in the persisted record format, one per line.
    pub records: Vec<String>,
    pub chat: Vec<SftRecord>,
    pub rejects: Vec<RejectRecord>,
    pub manifest: DatasetManifest,
}

fn reason_name(r: &RejectReason) -> &'static str {
    match r {
        RejectReason::InvalidToolCall => "invalid_tool_call",
        RejectReason::ToolExecutionFailed => "tool_execution_failed",
        RejectReason::NoFinalAnswer => "no_final_answer",
        RejectReason::DistanceExceeded { .. } => "distance_exceeded",
    }
}

/// Curate every raw trajectory against its stored ground truth and split
/// the results into the accepted dataset and a reject stream.
pub fn emit_cold_start_dataset(
    raw: &[Trajectory],
    cfg: &CurationConfig,
    system_prompt: &str,
) -> Result<ColdStartDataset, DatagenError> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut chat = Vec::new();
    let mut rejects = Vec::new();
    let mut reject_reasons = BTreeMap::new();
    for t in raw {
        let decision = curate_stored(t, cfg)?;
        let line = serialize_trajectory(t)?;
        if decision.accepted {
            records.push(line);
            chat.push(trajectory_to_chat(t, system_prompt));
        } else {
            for r in &decision.reasons {
                *reject_reasons.entry(reason_name(r).to_string()).or_insert(0) += 1;
            }
            rejects.push(RejectRecord { decision, record: line });
        }
    }
    let accepted = records.len();
    let manifest = DatasetManifest {
        raw: raw.len(),
        accepted,
        rejected: rejects.len(),
        acceptance_rate: if raw.is_empty() { 0.0 } else { accepted as f64 / raw.len() as f64 },
        reject_reasons,
        synthesis_failures: 0,
        prompt_version: PROMPT_VERSION.to_string(),
        config: *cfg,
    };
    Ok(ColdStartDataset { records, chat, rejects, manifest })
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatagenError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        writeln!(f, "{}", serde_json::to_string(item).map_err(|e| DatagenError::Encode(e.to_string()))?)?;
    }
    f.flush()?;
    Ok(())
}

impl ColdStartDataset {
    /// Write `trajectories.jsonl`, `chat.jsonl`, `rejects.jsonl` and
    /// `manifest.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), DatagenError> {
        fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("trajectories.jsonl"))?);
        for line in &self.records {
            writeln!(f, "{line}")?;
        }
        f.flush()?;
        write_lines(&dir.join("chat.jsonl"), &self.chat)?;
        write_lines(&dir.join("rejects.jsonl"), &self.rejects)?;
        let manifest = serde_json::to_string_pretty(&self.manifest).map_err(|e| DatagenError::Encode(e.to_string()))?;
        fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }
}
