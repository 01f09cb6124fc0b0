use std::sync::Arc;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::http::{send_json, HttpSettings};
use super::schema::{ParamKind, ParamSchema, ParamSpec};
use super::{Tool, ToolContext, ToolError, ToolOutput, ToolSpec, SEARCH_TOOL};

pub const DEFAULT_TOP_K: usize = 5;
const MAX_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

/// Backend-independent search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query: String,
    pub hits: Vec<SearchHit>,
}

pub trait SearchBackend: Send + Sync {
    /// Return at most `top_k` hits in backend order.
    fn search(&self, query: &str, top_k: usize) -> Result<SearchResult, ToolError>;
}

fn text_field(v: &Value, key: &str) -> String {
    v.get(key).and_then(Value::as_str).unwrap_or_default().trim().to_string()
}

/// Normalize a Tavily-style payload: `{"results": [{title, content, url}]}`.
pub fn normalize_tavily(query: &str, payload: &Value, top_k: usize) -> Result<SearchResult, ToolError> {
    let results = payload
        .get("results")
        .and_then(Value::as_array)
        .ok_or_else(|| ToolError::MalformedBackendResponse("missing `results` array".into()))?;
    let hits = results
        .iter()
        .take(top_k)
        .map(|r| SearchHit { title: text_field(r, "title"), snippet: text_field(r, "content"), url: text_field(r, "url") })
        .collect();
    Ok(SearchResult { query: query.to_string(), hits })
}

/// Normalize a YDC-style payload: `{"hits": [{title, description, snippets, url}]}`.
///
/// The snippet is the space-joined `snippets` list, or `description` when
/// that list is empty.
pub fn normalize_ydc(query: &str, payload: &Value, top_k: usize) -> Result<SearchResult, ToolError> {
    let raw_hits = payload
        .get("hits")
        .and_then(Value::as_array)
        .ok_or_else(|| ToolError::MalformedBackendResponse("missing `hits` array".into()))?;
    let hits = raw_hits
        .iter()
        .take(top_k)
        .map(|h| {
            let snippets: Vec<&str> = h
                .get("snippets")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).collect())
                .unwrap_or_default();
            let snippet = if snippets.is_empty() { text_field(h, "description") } else { snippets.join(" ") };
            SearchHit { title: text_field(h, "title"), snippet, url: text_field(h, "url") }
        })
        .collect();
    Ok(SearchResult { query: query.to_string(), hits })
}

/// Validate preconditions and truncate to `top_k`.
pub fn web_search(backend: &dyn SearchBackend, query: &str, top_k: usize) -> Result<SearchResult, ToolError> {
    if query.trim().is_empty() {
        return Err(ToolError::InvalidInput("query must be nonempty".into()));
    }
    if top_k == 0 {
        return Err(ToolError::InvalidInput("top_k must be at least 1".into()));
    }
    let mut result = backend.search(query, top_k)?;
    result.hits.truncate(top_k);
    Ok(result)
}

pub struct SearchTool {
    spec: ToolSpec,
    backend: Arc<dyn SearchBackend>,
    default_top_k: usize,
}

impl SearchTool {
    pub fn new(backend: Arc<dyn SearchBackend>) -> Self {
        Self::with_top_k(backend, DEFAULT_TOP_K)
    }

    pub fn with_top_k(backend: Arc<dyn SearchBackend>, default_top_k: usize) -> Self {
        let spec = ToolSpec {
            name: SEARCH_TOOL.into(),
            description: "Search the web to verify hypotheses derived from visual evidence.".into(),
            parameters: ParamSchema::new(vec![
                ParamSpec {
                    name: "query",
                    description: "The specific search string used to verify visual hypotheses or retrieve landmark coordinates.",
                    kind: ParamKind::Text,
                    required: true,
                },
                ParamSpec {
                    name: "top_k",
                    description: "Maximum number of results.",
                    kind: ParamKind::Integer { min: 1, max: MAX_TOP_K as i64 },
                    required: false,
                },
            ]),
        };
        Self { spec, backend, default_top_k: default_top_k.max(1) }
    }
}

impl Tool for SearchTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn invoke(&self, args: &Map<String, Value>, _ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        let query = args.get("query").and_then(Value::as_str).unwrap_or_default();
        let top_k = args.get("top_k").and_then(Value::as_u64).map_or(self.default_top_k, |k| k as usize);
        let result = web_search(self.backend.as_ref(), query, top_k)?;
        Ok(ToolOutput::json(serde_json::to_value(result).expect("search result serializes")))
    }
}

const TAVILY_ENDPOINT: &str = "https://api.tavily.com/search";
const YDC_ENDPOINT: &str = "https://api.ydc-index.io/search";

pub struct TavilySearch {
    api_key: String,
    settings: HttpSettings,
    client: Client,
}

impl TavilySearch {
    pub fn new(api_key: impl Into<String>, settings: HttpSettings) -> Result<Self, ToolError> {
        let client = settings.client()?;
        Ok(Self { api_key: api_key.into(), settings, client })
    }
}

impl SearchBackend for TavilySearch {
    fn search(&self, query: &str, top_k: usize) -> Result<SearchResult, ToolError> {
        let url = self.settings.endpoint(TAVILY_ENDPOINT);
        let body = send_json(&self.settings, || {
            self.client
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(&json!({ "query": query, "max_results": top_k }))
        })?;
        normalize_tavily(query, &body, top_k)
    }
}

pub struct YdcSearch {
    api_key: String,
    settings: HttpSettings,
    client: Client,
}

impl YdcSearch {
    pub fn new(api_key: impl Into<String>, settings: HttpSettings) -> Result<Self, ToolError> {
        let client = settings.client()?;
        Ok(Self { api_key: api_key.into(), settings, client })
    }
}

impl SearchBackend for YdcSearch {
    fn search(&self, query: &str, top_k: usize) -> Result<SearchResult, ToolError> {
        let url = self.settings.endpoint(YDC_ENDPOINT);
        let k = top_k.to_string();
        let body = send_json(&self.settings, || {
            self.client
                .get(&url)
                .header("X-API-Key", &self.api_key)
                .query(&[("query", query), ("num_web_results", k.as_str())])
        })?;
        normalize_ydc(query, &body, top_k)
    }
}
