use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::geocode::{GeocodeBackend, GeocodeCandidate};
use super::search::{normalize_tavily, normalize_ydc, SearchBackend, SearchResult};
use super::ToolError;

/// A canned search response in one of the supported provider shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawSearchPayload {
    Tavily(Value),
    Ydc(Value),
}

/// Queries mapped to canned backend responses.
///
/// ```json
/// {
///   "geocode": {"Wangfujing Beijing": [{"formatted_address": "...", "lat": 39.9, "lon": 116.4, "confidence": 0.9}]},
///   "search":  {"beijing yellow bus": {"tavily": {"results": [...]}}}
/// }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockCorpus {
    #[serde(default)]
    pub geocode: BTreeMap<String, Vec<GeocodeCandidate>>,
    #[serde(default)]
    pub search: BTreeMap<String, RawSearchPayload>,
}

/// Case-fold, trim and collapse whitespace so trivially different
/// spellings of a query hit the same entry.
pub(crate) fn normalize_query(q: &str) -> String {
    q.trim()
        .trim_matches(|c| c == '"' || c == '\'')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl MockCorpus {
    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ToolError::InvalidInput(format!("cannot read mock corpus {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ToolError::InvalidInput(format!("bad mock corpus {}: {e}", path.display())))
    }

    pub fn geocoder(&self) -> MockGeocoder {
        MockGeocoder {
            entries: self.geocode.iter().map(|(k, v)| (normalize_query(k), v.clone())).collect(),
        }
    }

    pub fn search(&self) -> MockSearch {
        MockSearch {
            entries: self.search.iter().map(|(k, v)| (normalize_query(k), v.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockGeocoder {
    entries: BTreeMap<String, Vec<GeocodeCandidate>>,
}

impl GeocodeBackend for MockGeocoder {
    fn lookup(&self, address: &str) -> Result<Vec<GeocodeCandidate>, ToolError> {
        Ok(self.entries.get(&normalize_query(address)).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockSearch {
    entries: BTreeMap<String, RawSearchPayload>,
}

impl SearchBackend for MockSearch {
    fn search(&self, query: &str, top_k: usize) -> Result<SearchResult, ToolError> {
        match self.entries.get(&normalize_query(query)) {
            None => Ok(SearchResult { query: query.to_string(), hits: Vec::new() }),
            Some(RawSearchPayload::Tavily(p)) => normalize_tavily(query, p, top_k),
            Some(RawSearchPayload::Ydc(p)) => normalize_ydc(query, p, top_k),
        }
    }
}
