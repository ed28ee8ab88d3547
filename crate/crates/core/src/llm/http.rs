use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{ChatRequest, Provider, ProviderFailure};

/// OpenAI-compatible chat-completions client.
pub struct HttpProvider {
    agent: Agent,
    endpoint_url: String,
    credential: String,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider").field("endpoint_url", &self.endpoint_url).finish_non_exhaustive()
    }
}

impl HttpProvider {
    pub fn new(endpoint_url: impl Into<String>, credential: impl Into<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, endpoint_url: endpoint_url.into(), credential: credential.into() }
    }
}

/// Pulls `choices[0].message.content` out of a response body.
pub(crate) fn first_choice(body: &Value) -> Option<String> {
    body.get("choices")?.get(0)?.get("message")?.get("content")?.as_str().map(str::to_string)
}

impl Provider for HttpProvider {
    fn send(&self, request: &ChatRequest) -> Result<String, ProviderFailure> {
        let body = json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        let mut response = self
            .agent
            .post(&self.endpoint_url)
            .header("Authorization", &format!("Bearer {}", self.credential))
            .send_json(&body)
            .map_err(|e| ProviderFailure::Transient { status: None, message: e.to_string() })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            let snippet: String = text.chars().take(200).collect();
            return Err(ProviderFailure::from_status(status, snippet));
        }
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderFailure::Transient { status: Some(status), message: e.to_string() })?;
        first_choice(&value)
            .ok_or_else(|| ProviderFailure::Fatal { status: Some(status), message: "response has no message content".into() })
    }
}
