use std::time::Duration;

use serde_json::json;

use super::{parse_decision, AgentBackend, AgentDecision, BackendError, Request};
use crate::executor::REPLY_SCHEMA;

/// Bearer token for the chat endpoint.
pub const API_KEY_VAR: &str = "PLEXEC_API_KEY";
/// Full URL of a chat-completions endpoint.
pub const ENDPOINT_VAR: &str = "PLEXEC_HTTP_ENDPOINT";
pub const MODEL_VAR: &str = "PLEXEC_HTTP_MODEL";
/// Request timeout in seconds.
pub const TIMEOUT_VAR: &str = "PLEXEC_HTTP_TIMEOUT_SECS";

const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8000/v1/chat/completions";
const DEFAULT_MODEL: &str = "default";
const DEFAULT_TIMEOUT_SECS: u64 = 60;

const REACTIVE_SYSTEM: &str =
    "You are a tool-using agent. Decide the next action from the task and the transcript so far.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the four `PLEXEC_*` variables, with defaults for all but the key.
    pub fn from_env() -> Result<Self, String> {
        let timeout = match std::env::var(TIMEOUT_VAR) {
            Ok(s) => s
                .parse::<u64>()
                .map_err(|_| format!("{TIMEOUT_VAR} must be a whole number of seconds, got {s:?}"))?,
            Err(_) => DEFAULT_TIMEOUT_SECS,
        };
        Ok(Self {
            endpoint: std::env::var(ENDPOINT_VAR).unwrap_or_else(|_| DEFAULT_ENDPOINT.into()),
            model: std::env::var(MODEL_VAR).unwrap_or_else(|_| DEFAULT_MODEL.into()),
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(timeout),
        })
    }
}

/// Sends each request to a chat-completions endpoint as a system message
/// (global workflow constraints) and a user message (the local step).
///
/// The reply's message content must hold one JSON object in the reply
/// schema. A malformed reply gets one retry with a repair instruction.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn post(&self, messages: &[serde_json::Value]) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": messages,
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| BackendError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Network(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}"))),
            _ => return Err(BackendError::Network(format!("HTTP {status}: {}", text.trim()))),
        }
        let json: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedReply(format!("response body is not JSON: {e}")))?;
        json.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::MalformedReply("response has no choices[0].message.content".into()))
    }
}

/// Extracts the outermost `{...}` span of `content` and parses it.
fn parse_content(content: &str) -> Result<AgentDecision, String> {
    let start = content.find('{').ok_or("reply contains no JSON object")?;
    let end = content.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    let json: serde_json::Value =
        serde_json::from_str(&content[start..=end]).map_err(|e| format!("invalid JSON: {e}"))?;
    parse_decision(&json)
}

impl AgentBackend for HttpBackend {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        let (system, user) = match request {
            Request::Action { context, .. } => (context.render_system(), context.render_user()),
            Request::Reactive { prompt, .. } => (format!("{REACTIVE_SYSTEM}\n{REPLY_SCHEMA}"), prompt.to_string()),
        };
        let mut messages = vec![
            json!({"role": "system", "content": system}),
            json!({"role": "user", "content": user}),
        ];
        let first = self.post(&messages)?;
        let err = match parse_content(&first) {
            Ok(d) => return Ok(d),
            Err(e) => e,
        };
        messages.push(json!({"role": "assistant", "content": first}));
        messages.push(json!({
            "role": "user",
            "content": format!("Your reply could not be used ({err}). {REPLY_SCHEMA}"),
        }));
        let second = self.post(&messages)?;
        parse_content(&second).map_err(|e| BackendError::MalformedReply(format!("after one repair attempt: {e}")))
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
