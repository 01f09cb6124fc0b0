//! Policy backends: anything that turns a conversation into one assistant
//! message.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::raster::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub images: Vec<ImageRef>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into(), images: Vec::new() }
    }

    pub fn with_image(mut self, image: ImageRef) -> Self {
        self.images.push(image);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    ChatEndpoint,
    Scripted,
}

/// Everything a backend sees for one completion.
#[derive(Debug, Clone, Copy)]
pub struct PolicyRequest<'a> {
    pub system_prompt: &'a str,
    pub image_id: &'a str,
    /// Which of several independent samples for the same image this is.
    pub sample_index: usize,
    pub messages: &'a [ChatMessage],
}

impl PolicyRequest<'_> {
    pub fn assistant_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned status {0}")]
    Status(u16),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("script: {0}")]
    Script(String),
}

impl PolicyError {
    pub fn retryable(&self) -> bool {
        match self {
            PolicyError::Transport(_) => true,
            PolicyError::Status(s) => *s == 429 || *s >= 500,
            _ => false,
        }
    }
}

pub trait PolicyBackend: Send + Sync {
    fn identity(&self) -> &str;
    fn mode(&self) -> PolicyMode;
    fn complete(&self, request: &PolicyRequest<'_>) -> Result<String, PolicyError>;
}

/// Canned assistant messages per image.
///
/// Each image owns one or more scripts; sample `i` plays script
/// `i % scripts.len()` and turn `t` of an episode returns message `t` of that
/// script. The backend is stateless, so one instance can serve concurrent
/// episodes and every replay is identical.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    identity: String,
    scripts: BTreeMap<String, Vec<Vec<String>>>,
}

/// File form: a flat list is a single script, a list of lists is one script
/// per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Single(Vec<String>),
    PerSample(Vec<Vec<String>>),
}

impl ScriptedPolicy {
    pub fn new(identity: impl Into<String>) -> Self {
        Self { identity: identity.into(), scripts: BTreeMap::new() }
    }

    pub fn with_script(mut self, image_id: impl Into<String>, messages: Vec<String>) -> Self {
        self.scripts.entry(image_id.into()).or_default().push(messages);
        self
    }

    pub fn insert(&mut self, image_id: impl Into<String>, entry: ScriptEntry) {
        let scripts = match entry {
            ScriptEntry::Single(s) => vec![s],
            ScriptEntry::PerSample(s) => s,
        };
        self.scripts.insert(image_id.into(), scripts);
    }

    pub fn from_entries(identity: impl Into<String>, entries: BTreeMap<String, ScriptEntry>) -> Self {
        let mut p = Self::new(identity);
        for (k, v) in entries {
            p.insert(k, v);
        }
        p
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Script(format!("cannot read {}: {e}", path.display())))?;
        let entries: BTreeMap<String, ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| PolicyError::Script(format!("bad script file {}: {e}", path.display())))?;
        Ok(Self::from_entries(format!("scripted:{}", path.display()), entries))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.scripts.keys().map(String::as_str)
    }
}

impl PolicyBackend for ScriptedPolicy {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::Scripted
    }

    fn complete(&self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        let scripts = self
            .scripts
            .get(request.image_id)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| PolicyError::Script(format!("no script for image `{}`", request.image_id)))?;
        let script = &scripts[request.sample_index % scripts.len()];
        let turn = request.assistant_turns();
        script.get(turn).cloned().ok_or_else(|| {
            PolicyError::Script(format!(
                "script for `{}` has {} turns, turn {} requested",
                request.image_id,
                script.len(),
                turn + 1
            ))
        })
    }
}

/// Retry schedule for transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 2, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

/// Any server speaking the chat-completions shape: role-tagged messages
/// with image parts in, assistant text out.
pub struct ChatEndpointPolicy {
    identity: String,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    retry: RetryPolicy,
    client: Client,
}

impl ChatEndpointPolicy {
    pub fn new(base_url: &str, model: impl Into<String>) -> Result<Self, PolicyError> {
        let model = model.into();
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        Ok(Self {
            identity: format!("chat:{model}"),
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model,
            api_key: None,
            temperature: 1.0,
            retry: RetryPolicy::default(),
            client,
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn encode_message(m: &ChatMessage) -> Result<Value, PolicyError> {
        // Tool observations travel as user turns; the tag protocol carries the
        // structure, not the role.
        let role = match m.role {
            Role::System => "system",
            Role::Assistant => "assistant",
            Role::User | Role::Tool => "user",
        };
        if m.images.is_empty() {
            return Ok(json!({ "role": role, "content": m.content }));
        }
        let mut parts = Vec::with_capacity(m.images.len() + 1);
        for img in &m.images {
            let png = img.to_png().map_err(|e| PolicyError::BadResponse(format!("cannot encode image: {e}")))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}}));
        }
        parts.push(json!({"type": "text", "text": m.content}));
        Ok(json!({ "role": role, "content": parts }))
    }

    pub(crate) fn request_body(&self, request: &PolicyRequest<'_>) -> Result<Value, PolicyError> {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for m in request.messages {
            messages.push(Self::encode_message(m)?);
        }
        Ok(json!({ "model": self.model, "messages": messages, "temperature": self.temperature }))
    }

    fn send_once(&self, body: &Value) -> Result<String, PolicyError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| PolicyError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(PolicyError::Status(resp.status().as_u16()));
        }
        let v: Value = resp.json().map_err(|e| PolicyError::BadResponse(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| PolicyError::BadResponse("missing choices[0].message.content".into()))
    }
}

impl PolicyBackend for ChatEndpointPolicy {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::ChatEndpoint
    }

    fn complete(&self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        let body = self.request_body(request)?;
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Err(e) if e.retryable() && attempt < self.retry.retries => {
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
