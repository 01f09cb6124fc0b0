use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde_json::Value;

use super::{ToolError, DEFAULT_TIMEOUT};

/// Transport settings shared by the HTTP tool backends.
#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub timeout: Duration,
    /// Extra attempts after a retryable failure.
    pub retries: u32,
    pub retry_delay: Duration,
    /// Overrides the provider's endpoint (used by tests and proxies).
    pub base_url: Option<String>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            retries: 1,
            retry_delay: Duration::from_millis(250),
            base_url: None,
        }
    }
}

impl HttpSettings {
    pub(crate) fn client(&self) -> Result<Client, ToolError> {
        Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| ToolError::BackendUnreachable(e.to_string()))
    }

    pub(crate) fn endpoint(&self, default: &str) -> String {
        self.base_url.clone().unwrap_or_else(|| default.to_string())
    }
}

fn send_once(req: RequestBuilder) -> Result<Value, ToolError> {
    let resp = req.send().map_err(|e| ToolError::BackendUnreachable(e.to_string()))?;
    let status = resp.status();
    if status == StatusCode::TOO_MANY_REQUESTS {
        return Err(ToolError::RateLimited);
    }
    if status.is_server_error() {
        return Err(ToolError::BackendUnreachable(format!("server error {status}")));
    }
    if !status.is_success() {
        return Err(ToolError::BackendRejected(status.as_u16()));
    }
    resp.json::<Value>()
        .map_err(|e| ToolError::MalformedBackendResponse(e.to_string()))
}

/// Send a JSON request, retrying retryable failures per `settings`.
pub(crate) fn send_json(
    settings: &HttpSettings,
    build: impl Fn() -> RequestBuilder,
) -> Result<Value, ToolError> {
    let mut attempt = 0;
    loop {
        match send_once(build()) {
            Err(e) if e.retryable() && attempt < settings.retries => {
                attempt += 1;
                std::thread::sleep(settings.retry_delay);
            }
            other => return other,
        }
    }
}
