use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, BackendRequest};

/// Environment variable holding the chat backend API key.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

/// Chat-completion backend speaking the common `/chat/completions` wire
/// format: a single user message per request, and the first choice's message
/// content as the response text.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    pub fn request_body(req: &BackendRequest<'_>) -> serde_json::Value {
        let mut body = json!({
            "model": req.params.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
        });
        if let Some(stop) = &req.params.stop {
            body["stop"] = json!(stop);
        }
        body
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn send(&self, req: &BackendRequest<'_>) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let body = Self::request_body(req).to_string();
        let mut resp = call.send(body.as_str()).map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        if text.trim().is_empty() {
            return Err(BackendError::Empty);
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Transport(format!("undecodable response body: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(content)
    }
}
