//! Chat-completions HTTP backend.
//!
//! Request body:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "user", "content": "<prompt>"}],
//!  "temperature": 0.0, "max_tokens": 256}
//! ```
//!
//! sent as `POST {base_url}/chat/completions` with
//! `Authorization: Bearer <key>`. The completion text is read from
//! `choices[0].message.content`, falling back to `choices[0].text`.

use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{BackendError, CompletionBackend, GenerationRequest};

#[derive(Debug, Serialize, PartialEq)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ChatRequestBody<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl<'a> ChatRequestBody<'a> {
    pub fn from_request(req: &'a GenerationRequest) -> Self {
        Self {
            model: &req.model_name,
            messages: vec![ChatMessage { role: "user", content: &req.prompt }],
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        }
    }
}

pub struct HttpBackend {
    url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let body = ChatRequestBody::from_request(req);
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}"))),
            _ => return Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("malformed response body: {e}")))?;
        let choice = &json["choices"][0];
        choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Transport("response has no completion text".into()))
    }
}
