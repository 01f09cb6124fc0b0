//! The tool action space: geocoding, web search and image zoom behind one
//! dispatch interface.
//!
//! Every failure, including calls to tools that do not exist, comes back as
//! an observation the agent can read. Nothing raised here ends an episode.

mod geocode;
mod http;
mod mock;
mod schema;
mod search;
mod zoom;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::protocol::ToolCall;
use crate::raster::ImageRef;

pub use geocode::{GeocodeBackend, GeocodeCandidate, GeocodeResult, GeocodeTool, GoogleGeocoder};
pub use http::HttpSettings;
pub use mock::{MockCorpus, MockGeocoder, MockSearch, RawSearchPayload};
pub use schema::{ParamKind, ParamSchema, ParamSpec};
pub use search::{
    normalize_tavily, normalize_ydc, SearchBackend, SearchHit, SearchResult, SearchTool, TavilySearch,
    YdcSearch, DEFAULT_TOP_K,
};
pub use zoom::{zoom, ZoomRequest, ZoomResult, ZoomTool};

pub const GEOCODE_TOOL: &str = "maps_geocode";
pub const SEARCH_TOOL: &str = "search_web";
pub const ZOOM_TOOL: &str = "image_zoom_in_tool";

pub const GEOCODE_API_KEY_ENV: &str = "GEOCODE_API_KEY";
pub const SEARCH_API_KEY_ENV: &str = "SEARCH_API_KEY";
pub const SEARCH_BACKEND_ENV: &str = "SEARCH_BACKEND";

/// Describes one tool to the policy and validates its arguments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: ParamSchema,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("arguments do not match the schema: {0}")]
    SchemaViolation(String),
    #[error("tool call payload is malformed: {0}")]
    MalformedCall(String),
    #[error("tool is not available in this mode")]
    Unavailable,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("backend rate limited the request")]
    RateLimited,
    #[error("backend rejected the request with status {0}")]
    BackendRejected(u16),
    #[error("backend response is malformed: {0}")]
    MalformedBackendResponse(String),
    #[error("bbox {bbox:?} exceeds image bounds {width}x{height}")]
    BboxOutOfBounds { bbox: [u32; 4], width: u32, height: u32 },
    #[error("bbox {0:?} has zero area")]
    DegenerateBbox([u32; 4]),
    #[error("cannot read image: {0}")]
    UnreadableImage(String),
}

/// Whether a failed call was the policy's fault or the environment's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    InvalidCall,
    ExecutionFailed,
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::UnknownTool(_) => "unknown_tool",
            ToolError::SchemaViolation(_) => "schema_violation",
            ToolError::MalformedCall(_) => "malformed_call",
            ToolError::Unavailable => "tool_unavailable",
            ToolError::InvalidInput(_) => "invalid_input",
            ToolError::BackendUnreachable(_) => "backend_unreachable",
            ToolError::RateLimited => "rate_limited",
            ToolError::BackendRejected(_) => "backend_rejected",
            ToolError::MalformedBackendResponse(_) => "malformed_backend_response",
            ToolError::BboxOutOfBounds { .. } => "bbox_out_of_bounds",
            ToolError::DegenerateBbox(_) => "degenerate_bbox",
            ToolError::UnreadableImage(_) => "unreadable_image",
        }
    }

    pub fn retryable(&self) -> bool {
        matches!(self, ToolError::BackendUnreachable(_) | ToolError::RateLimited)
    }

    pub fn class(&self) -> FailureClass {
        failure_class(self.kind())
    }
}

/// Classify an error kind string as found in a rendered observation.
pub fn failure_class(kind: &str) -> FailureClass {
    match kind {
        "unknown_tool" | "schema_violation" | "malformed_call" | "tool_unavailable" | "invalid_input" => {
            FailureClass::InvalidCall
        }
        _ => FailureClass::ExecutionFailed,
    }
}

/// Per-episode context a tool may need.
#[derive(Debug, Clone)]
pub struct ToolContext {
    pub image: ImageRef,
}

#[derive(Debug, Clone)]
pub struct ToolOutput {
    pub result: Value,
    /// An extra image handed back to the policy (zoom crops).
    pub attachment: Option<ImageRef>,
}

impl ToolOutput {
    pub fn json(result: Value) -> Self {
        Self { result, attachment: None }
    }
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;
    fn invoke(&self, args: &Map<String, Value>, ctx: &ToolContext) -> Result<ToolOutput, ToolError>;
}

/// The outcome of one dispatched call.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub tool: String,
    /// Observation text placed inside `<tool_response>`.
    pub observation: String,
    pub error: Option<ToolError>,
    pub attachment: Option<ImageRef>,
}

impl Dispatch {
    pub fn success(&self) -> bool {
        self.error.is_none()
    }

    pub fn failure(tool: &str, error: ToolError) -> Self {
        Self {
            tool: tool.to_string(),
            observation: error_observation(tool, &error),
            error: Some(error),
            attachment: None,
        }
    }
}

/// JSON text safe to embed inside protocol tags: `<` is escaped so no
/// observation can ever open or close a tag.
pub fn tag_safe_json(value: &Value) -> String {
    serde_json::to_string(value).expect("json value serializes").replace('<', "\\u003c")
}

pub fn ok_observation(tool: &str, result: &Value) -> String {
    tag_safe_json(&json!({ "status": "ok", "tool": tool, "result": result }))
}

pub fn error_observation(tool: &str, error: &ToolError) -> String {
    tag_safe_json(&json!({
        "status": "error",
        "tool": tool,
        "error": {
            "kind": error.kind(),
            "message": error.to_string(),
            "retryable": error.retryable(),
        },
    }))
}

/// Status recovered from an observation string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObservationStatus {
    Ok,
    Error { kind: String },
    Unrecognized,
}

pub fn observation_status(observation: &str) -> ObservationStatus {
    let Ok(v) = serde_json::from_str::<Value>(observation) else {
        return ObservationStatus::Unrecognized;
    };
    match v.get("status").and_then(Value::as_str) {
        Some("ok") => ObservationStatus::Ok,
        Some("error") => ObservationStatus::Error {
            kind: v
                .pointer("/error/kind")
                .and_then(Value::as_str)
                .unwrap_or("unknown")
                .to_string(),
        },
        _ => ObservationStatus::Unrecognized,
    }
}

#[derive(Debug, Default)]
struct Counters {
    success: AtomicU64,
    failure: AtomicU64,
}

/// Registry-wide success and failure counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DispatchStats {
    pub success: u64,
    pub failure: u64,
}

/// Named tools with schema-checked dispatch.
#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
    counters: Counters,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.names()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ToolError> {
        let name = tool.spec().name.clone();
        if self.tools.contains_key(&name) {
            return Err(ToolError::InvalidInput(format!("tool `{name}` registered twice")));
        }
        self.tools.insert(name, tool);
        Ok(())
    }

    pub fn with(mut self, tool: Arc<dyn Tool>) -> Result<Self, ToolError> {
        self.register(tool)?;
        Ok(self)
    }

    /// Keep only the named tools. Unknown names are an error.
    pub fn retain(mut self, names: &[String]) -> Result<Self, ToolError> {
        if let Some(missing) = names.iter().find(|n| !self.tools.contains_key(n.as_str())) {
            return Err(ToolError::UnknownTool(missing.clone()));
        }
        self.tools.retain(|k, _| names.contains(k));
        Ok(self)
    }

    /// Geocode, search and zoom tools over a mock corpus.
    pub fn mock(corpus: &MockCorpus) -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(GeocodeTool::new(Arc::new(corpus.geocoder()))))
            .expect("fresh registry");
        reg.register(Arc::new(SearchTool::new(Arc::new(corpus.search()))))
            .expect("fresh registry");
        reg.register(Arc::new(ZoomTool::new())).expect("fresh registry");
        reg
    }

    /// Live geocoding and search configured from the environment.
    ///
    /// `SEARCH_BACKEND` selects `tavily` (default) or `ydc`.
    pub fn live_from_env(settings: HttpSettings) -> Result<Self, ToolError> {
        let key = |var: &str| {
            std::env::var(var)
                .map_err(|_| ToolError::InvalidInput(format!("environment variable {var} is not set")))
        };
        let geocoder = GoogleGeocoder::new(key(GEOCODE_API_KEY_ENV)?, settings.clone())?;
        let search_key = key(SEARCH_API_KEY_ENV)?;
        let backend = std::env::var(SEARCH_BACKEND_ENV).unwrap_or_else(|_| "tavily".into());
        let search: Arc<dyn SearchBackend> = match backend.to_ascii_lowercase().as_str() {
            "tavily" => Arc::new(TavilySearch::new(search_key, settings)?),
            "ydc" => Arc::new(YdcSearch::new(search_key, settings)?),
            other => {
                return Err(ToolError::InvalidInput(format!("unknown search backend `{other}`")))
            }
        };
        Self::new()
            .with(Arc::new(GeocodeTool::new(Arc::new(geocoder))))?
            .with(Arc::new(SearchTool::new(search)))?
            .with(Arc::new(ZoomTool::new()))
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn specs(&self) -> Vec<&ToolSpec> {
        self.tools.values().map(|t| t.spec()).collect()
    }

    pub fn stats(&self) -> DispatchStats {
        DispatchStats {
            success: self.counters.success.load(Ordering::Relaxed),
            failure: self.counters.failure.load(Ordering::Relaxed),
        }
    }

    /// Record a failure that never reached a tool, such as an unparseable
    /// payload.
    pub fn record_failure(&self) {
        self.counters.failure.fetch_add(1, Ordering::Relaxed);
    }

    /// Validate and run one call. Never fails; errors become observations.
    pub fn dispatch(&self, call: &ToolCall, ctx: &ToolContext) -> Dispatch {
        let result = match self.tools.get(&call.name) {
            None => Err(ToolError::UnknownTool(call.name.clone())),
            Some(tool) => tool
                .spec()
                .parameters
                .validate(&call.arguments)
                .and_then(|()| tool.invoke(&call.arguments, ctx)),
        };
        match result {
            Ok(out) => {
                self.counters.success.fetch_add(1, Ordering::Relaxed);
                Dispatch {
                    tool: call.name.clone(),
                    observation: ok_observation(&call.name, &out.result),
                    error: None,
                    attachment: out.attachment,
                }
            }
            Err(e) => {
                self.counters.failure.fetch_add(1, Ordering::Relaxed);
                Dispatch::failure(&call.name, e)
            }
        }
    }
}

/// Default network timeout for tool backends.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> MockCorpus {
        serde_json::from_value(json!({
            "geocode": {
                "Wangfujing Beijing": [
                    {"formatted_address": "Wangfujing, Dongcheng, Beijing, China", "lat": 39.9067, "lon": 116.4032, "confidence": 0.9}
                ]
            },
            "search": {}
        }))
        .unwrap()
    }

    fn ctx() -> ToolContext {
        ToolContext { image: ImageRef::blank("img", 800, 700) }
    }

    #[test]
    fn valid_call_counts_success() {
        let reg = ToolRegistry::mock(&corpus());
        let d = reg.dispatch(&ToolCall::new(GEOCODE_TOOL, json!({"address": "Wangfujing Beijing"})), &ctx());
        assert!(d.success(), "{}", d.observation);
        assert_eq!(observation_status(&d.observation), ObservationStatus::Ok);
        assert!(d.observation.contains("39.9067"));
        assert_eq!(reg.stats(), DispatchStats { success: 1, failure: 0 });
    }

    #[test]
    fn unknown_tool_is_an_observation() {
        let reg = ToolRegistry::mock(&corpus());
        let d = reg.dispatch(&ToolCall::new("nonexistent_tool", json!({})), &ctx());
        assert_eq!(d.error, Some(ToolError::UnknownTool("nonexistent_tool".into())));
        assert_eq!(observation_status(&d.observation), ObservationStatus::Error { kind: "unknown_tool".into() });
        assert_eq!(reg.stats(), DispatchStats { success: 0, failure: 1 });
    }

    #[test]
    fn three_element_bbox_violates_schema() {
        let reg = ToolRegistry::mock(&corpus());
        let d = reg.dispatch(&ToolCall::new(ZOOM_TOOL, json!({"bbox_2d": [1, 2, 3]})), &ctx());
        assert!(matches!(d.error, Some(ToolError::SchemaViolation(_))));
        assert_eq!(d.error.unwrap().class(), FailureClass::InvalidCall);
        assert_eq!(reg.stats().failure, 1);
    }

    #[test]
    fn zoom_dispatch_attaches_crop() {
        let reg = ToolRegistry::mock(&corpus());
        let d = reg.dispatch(&ToolCall::new(ZOOM_TOOL, json!({"bbox_2d": [350, 560, 422, 636]})), &ctx());
        assert!(d.success(), "{}", d.observation);
        let crop = d.attachment.unwrap().load().unwrap();
        assert_eq!(crop.dimensions(), (72, 76));
    }

    #[test]
    fn execution_failures_classified() {
        let reg = ToolRegistry::mock(&corpus());
        let small = ToolContext { image: ImageRef::blank("img", 800, 600) };
        let d = reg.dispatch(&ToolCall::new(ZOOM_TOOL, json!({"bbox_2d": [350, 560, 422, 636]})), &small);
        assert_eq!(d.error.as_ref().unwrap().class(), FailureClass::ExecutionFailed);
        let kind = match observation_status(&d.observation) {
            ObservationStatus::Error { kind } => kind,
            s => panic!("{s:?}"),
        };
        assert_eq!(failure_class(&kind), FailureClass::ExecutionFailed);
    }

    #[test]
    fn observations_never_contain_tags() {
        let obs = ok_observation("t", &json!({"text": "<think>x</think> a<b"}));
        assert!(!crate::protocol::contains_tag(&obs));
        let v: Value = serde_json::from_str(&obs).unwrap();
        assert_eq!(v["result"]["text"], "<think>x</think> a<b");
    }

    #[test]
    fn duplicate_registration_rejected() {
        let reg = ToolRegistry::new().with(Arc::new(ZoomTool::new())).unwrap();
        assert!(reg.with(Arc::new(ZoomTool::new())).is_err());
    }

    #[test]
    fn mock_registry_names() {
        let reg = ToolRegistry::mock(&corpus());
        assert_eq!(reg.names(), vec![ZOOM_TOOL, GEOCODE_TOOL, SEARCH_TOOL]);
        assert_eq!(reg.specs().len(), 3);
    }
}
