//! Cold-start data generation: observer-assisted synthesis, rejection
//! sampling, dataset emission and identifier anonymization.

mod anon;
mod curate;
mod emit;
mod synth;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::geodesy::GeoPoint;
use crate::protocol::ProtocolError;

pub use anon::{anonymize_corpus, anonymize_ground_truth, anonymize_id, IdMapping, ANON_SALT_ENV, HASH_HEX_LEN};
pub use curate::{curate, curate_stored, CurationConfig, CurationDecision, RejectReason, DEFAULT_DISTANCE_THRESHOLD_KM};
pub use emit::{
    emit_cold_start_dataset, emit_sft_dataset, sft_record, trajectory_to_chat, ColdStartDataset, DatasetManifest,
    RejectRecord, SftMessage, SftRecord,
};
pub use synth::{synthesize_batch, synthesize_trajectory, ObserverReport, Synthesis, OBSERVER_PROMPT};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("observer failed: {0}")]
    ObserverFailure(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ground truth table: {0}")]
    Table(String),
    #[error("encoding: {0}")]
    Encode(String),
    #[error("empty identifier")]
    EmptyId,
    #[error("empty salt")]
    EmptySalt,
    #[error("hash collision: {first} and {second} both map to {hash}")]
    CollisionDetected { first: String, second: String, hash: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroundTruthRow {
    image_id: String,
    lat: f64,
    lon: f64,
}

/// Read an `image_id,lat,lon` table. Ids must be unique.
pub fn read_ground_truth(path: &Path) -> Result<Vec<(String, GeoPoint)>, DatagenError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatagenError::Table(format!("{}: {e}", path.display())))?;
    parse_rows(reader.deserialize())
}

/// Same as [`read_ground_truth`] over in-memory CSV text.
pub fn parse_ground_truth(text: &str) -> Result<Vec<(String, GeoPoint)>, DatagenError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    parse_rows(reader.deserialize())
}

fn parse_rows<I>(rows: I) -> Result<Vec<(String, GeoPoint)>, DatagenError>
where
    I: Iterator<Item = Result<GroundTruthRow, csv::Error>>,
{
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| DatagenError::Table(e.to_string()))?;
        if row.image_id.is_empty() {
            return Err(DatagenError::EmptyId);
        }
        if !seen.insert(row.image_id.clone()) {
            return Err(DatagenError::Table(format!("duplicate image_id {}", row.image_id)));
        }
        let p = GeoPoint::new(row.lat, row.lon).map_err(|e| DatagenError::Table(format!("{}: {e}", row.image_id)))?;
        out.push((row.image_id, p));
    }
    Ok(out)
}

pub fn write_ground_truth(rows: &[(String, GeoPoint)]) -> Result<String, DatagenError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (id, p) in rows {
        w.serialize(GroundTruthRow { image_id: id.clone(), lat: p.lat(), lon: p.lon() })
            .map_err(|e| DatagenError::Table(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| DatagenError::Table(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| DatagenError::Table(e.to_string()))
}
