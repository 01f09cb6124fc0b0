use std::sync::Arc;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::http::{send_json, HttpSettings};
use super::schema::{ParamKind, ParamSchema, ParamSpec};
use super::{Tool, ToolContext, ToolError, ToolOutput, ToolSpec, GEOCODE_TOOL};
use crate::geodesy::GeoPoint;

/// Candidates forwarded to the policy per geocode call.
pub const MAX_FORWARDED_CANDIDATES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodeCandidate {
    pub formatted_address: String,
    #[serde(flatten)]
    pub point: GeoPoint,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodeResult {
    pub query: String,
    /// Sorted by descending confidence.
    pub candidates: Vec<GeocodeCandidate>,
}

pub trait GeocodeBackend: Send + Sync {
    /// Zero candidates is an ordinary result, not an error.
    fn lookup(&self, address: &str) -> Result<Vec<GeocodeCandidate>, ToolError>;
}

/// Geocode `address`, returning candidates by descending confidence.
pub fn geocode(backend: &dyn GeocodeBackend, address: &str) -> Result<GeocodeResult, ToolError> {
    if address.trim().is_empty() {
        return Err(ToolError::InvalidInput("address must be nonempty".into()));
    }
    let mut candidates = backend.lookup(address)?;
    if candidates.iter().any(|c| !(0.0..=1.0).contains(&c.confidence)) {
        return Err(ToolError::MalformedBackendResponse("confidence outside [0, 1]".into()));
    }
    candidates.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(GeocodeResult { query: address.to_string(), candidates })
}

pub struct GeocodeTool {
    spec: ToolSpec,
    backend: Arc<dyn GeocodeBackend>,
}

impl GeocodeTool {
    pub fn new(backend: Arc<dyn GeocodeBackend>) -> Self {
        let spec = ToolSpec {
            name: GEOCODE_TOOL.into(),
            description: "Convert textual locations into geographic coordinates.".into(),
            parameters: ParamSchema::new(vec![ParamSpec {
                name: "address",
                description: "The target place name or street address identified during the visual reasoning stage.",
                kind: ParamKind::Text,
                required: true,
            }]),
        };
        Self { spec, backend }
    }
}

impl Tool for GeocodeTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, args: &Map<String, Value>, _ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        let address = args.get("address").and_then(Value::as_str).unwrap_or_default();
        let mut result = geocode(self.backend.as_ref(), address)?;
        result.candidates.truncate(MAX_FORWARDED_CANDIDATES);
        Ok(ToolOutput::json(serde_json::to_value(result).expect("geocode result serializes")))
    }
}

const GOOGLE_ENDPOINT: &str = "https://maps.googleapis.com/maps/api/geocode/json";

/// Google Maps Geocoding API adapter.
pub struct GoogleGeocoder {
    api_key: String,
    settings: HttpSettings,
    client: Client,
}

impl GoogleGeocoder {
    pub fn new(api_key: impl Into<String>, settings: HttpSettings) -> Result<Self, ToolError> {
        let client = settings.client()?;
        Ok(Self { api_key: api_key.into(), settings, client })
    }

    // Google reports precision, not a score; map it onto [0, 1].
    fn confidence(location_type: &str, partial: bool) -> f64 {
        let base = match location_type {
            "ROOFTOP" => 1.0,
            "RANGE_INTERPOLATED" => 0.8,
            "GEOMETRIC_CENTER" => 0.6,
            _ => 0.4,
        };
        if partial { base * 0.5 } else { base }
    }

    pub(crate) fn parse_response(body: &Value) -> Result<Vec<GeocodeCandidate>, ToolError> {
        let malformed = |m: &str| ToolError::MalformedBackendResponse(m.to_string());
        match body.get("status").and_then(Value::as_str) {
            Some("OK") => {}
            Some("ZERO_RESULTS") => return Ok(Vec::new()),
            Some("OVER_QUERY_LIMIT") | Some("OVER_DAILY_LIMIT") => return Err(ToolError::RateLimited),
            Some("UNKNOWN_ERROR") => return Err(ToolError::BackendUnreachable("UNKNOWN_ERROR".into())),
            Some(other) => return Err(malformed(&format!("status {other}"))),
            None => return Err(malformed("missing status")),
        }
        let results = body.get("results").and_then(Value::as_array).ok_or_else(|| malformed("missing results"))?;
        results
            .iter()
            .map(|r| {
                let loc = r.pointer("/geometry/location").ok_or_else(|| malformed("missing geometry"))?;
                let lat = loc.get("lat").and_then(Value::as_f64).ok_or_else(|| malformed("missing lat"))?;
                let lng = loc.get("lng").and_then(Value::as_f64).ok_or_else(|| malformed("missing lng"))?;
                let point = GeoPoint::new(lat, lng).map_err(|e| malformed(&e.to_string()))?;
                let location_type = r.pointer("/geometry/location_type").and_then(Value::as_str).unwrap_or("");
                let partial = r.get("partial_match").and_then(Value::as_bool).unwrap_or(false);
                Ok(GeocodeCandidate {
                    formatted_address: r
                        .get("formatted_address")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    point,
                    confidence: Self::confidence(location_type, partial),
                })
            })
            .collect()
    }
}

impl GeocodeBackend for GoogleGeocoder {
    fn lookup(&self, address: &str) -> Result<Vec<GeocodeCandidate>, ToolError> {
        let url = self.settings.endpoint(GOOGLE_ENDPOINT);
        let body = send_json(&self.settings, || {
            self.client.get(&url).query(&[("address", address), ("key", self.api_key.as_str())])
        })?;
        Self::parse_response(&body)
    }
}
