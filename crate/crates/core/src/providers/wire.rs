//! Request bodies and reply classification for the two HTTP API shapes.

use serde_json::{json, Value};

use super::{
    timeout_of, ChatReply, ChatRequest, ChatTransport, ProviderConfig, ProviderError, ProviderKind,
    TransportError,
};
use crate::prompting::REPAIR_INSTRUCTION;

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

/// `max_tokens` is mandatory for Anthropic-compatible APIs; this is used
/// when the config does not set it.
pub const DEFAULT_ANTHROPIC_MAX_TOKENS: u64 = 1024;

fn merge_params(body: &mut Value, config: &ProviderConfig) {
    let obj = body.as_object_mut().expect("body is an object");
    for (k, v) in config.effective_params() {
        obj.insert(k, v);
    }
}

/// Chat-completions body: text, then the image as a data URL, then the
/// caption if any.
pub fn openai_request_body(config: &ProviderConfig, request: &ChatRequest<'_>) -> Value {
    let bundle = request.bundle;
    let mut parts = vec![
        json!({"type": "text", "text": bundle.instruction}),
        json!({"type": "image_url", "image_url": {"url": request.image.data_url()}}),
    ];
    if let Some(c) = &bundle.caption {
        parts.push(json!({"type": "text", "text": c}));
    }
    let mut messages = vec![
        json!({"role": "system", "content": bundle.system_message}),
        json!({"role": "user", "content": parts}),
    ];
    for reply in request.failed_replies {
        messages.push(json!({"role": "assistant", "content": reply}));
        messages.push(json!({"role": "user", "content": REPAIR_INSTRUCTION}));
    }
    let mut body = json!({"model": config.model_id, "messages": messages});
    merge_params(&mut body, config);
    body
}

/// Messages-API body with a base64 image source block.
pub fn anthropic_request_body(config: &ProviderConfig, request: &ChatRequest<'_>) -> Value {
    let bundle = request.bundle;
    let mut parts = vec![
        json!({"type": "text", "text": bundle.instruction}),
        json!({"type": "image", "source": {
            "type": "base64",
            "media_type": request.image.media_type().mime(),
            "data": request.image.to_base64(),
        }}),
    ];
    if let Some(c) = &bundle.caption {
        parts.push(json!({"type": "text", "text": c}));
    }
    let mut messages = vec![json!({"role": "user", "content": parts})];
    for reply in request.failed_replies {
        messages.push(json!({"role": "assistant", "content": reply}));
        messages.push(json!({"role": "user", "content": REPAIR_INSTRUCTION}));
    }
    let mut body = json!({
        "model": config.model_id,
        "system": bundle.system_message,
        "messages": messages,
    });
    merge_params(&mut body, config);
    body
}

fn error_field<'a>(body: &'a Value, path: &[&str]) -> Option<&'a str> {
    let mut v = body;
    for p in path {
        v = v.get(p)?;
    }
    v.as_str()
}

fn short(body: &str) -> String {
    let mut s: String = body.chars().take(300).collect();
    if s.len() < body.len() {
        s.push('…');
    }
    s
}

/// Status handling shared by both API shapes. `None` means "inspect the
/// body further".
fn classify_status(status: u16, body: &str) -> Option<TransportError> {
    match status {
        200..=299 => None,
        401 | 403 | 404 => Some(TransportError::Config(format!(
            "HTTP {status}: {}",
            short(body)
        ))),
        408 | 409 | 429 | 500..=599 => Some(TransportError::Retryable(format!(
            "HTTP {status}: {}",
            short(body)
        ))),
        _ => Some(TransportError::Rejected(format!(
            "HTTP {status}: {}",
            short(body)
        ))),
    }
}

pub fn classify_openai(status: u16, body: &str) -> Result<ChatReply, TransportError> {
    let parsed: Option<Value> = serde_json::from_str(body).ok();
    if let Some(err) = classify_status(status, body) {
        // Azure-style content filtering arrives as HTTP 400.
        if let (TransportError::Rejected(_), Some(v)) = (&err, &parsed) {
            let code = error_field(v, &["error", "code"]);
            let inner = error_field(v, &["error", "innererror", "code"]);
            if code == Some("content_filter") || inner == Some("ResponsibleAIPolicyViolation") {
                return Ok(ChatReply::Refused(format!(
                    "content_filter: {}",
                    short(body)
                )));
            }
        }
        return Err(err);
    }
    let v = parsed
        .ok_or_else(|| TransportError::Retryable(format!("unparseable body: {}", short(body))))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| TransportError::Retryable("response has no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Ok(ChatReply::Refused("finish_reason content_filter".into()));
    }
    let message = choice.get("message").cloned().unwrap_or(Value::Null);
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Ok(ChatReply::Refused(refusal.to_string()));
    }
    Ok(ChatReply::Text(
        message
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
    ))
}

pub fn classify_anthropic(status: u16, body: &str) -> Result<ChatReply, TransportError> {
    if let Some(err) = classify_status(status, body) {
        return Err(err);
    }
    let v: Value = serde_json::from_str(body)
        .map_err(|_| TransportError::Retryable(format!("unparseable body: {}", short(body))))?;
    if v.get("stop_reason").and_then(Value::as_str) == Some("refusal") {
        return Ok(ChatReply::Refused("stop_reason refusal".into()));
    }
    let text: String = v
        .get("content")
        .and_then(Value::as_array)
        .map(|blocks| {
            blocks
                .iter()
                .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
                .filter_map(|b| b.get("text").and_then(Value::as_str))
                .collect()
        })
        .unwrap_or_default();
    Ok(ChatReply::Text(text))
}

/// Blocking HTTPS transport for OpenAI- and Anthropic-compatible APIs.
pub struct HttpTransport {
    config: ProviderConfig,
    endpoint: String,
    key: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// Reads the API key from the environment variable named in `config`.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        super::check_credentials(config)?;
        let var = config.api_key_env.as_deref().unwrap_or_default();
        let key = std::env::var(var).unwrap_or_default();
        Self::with_key(config, key)
    }

    pub fn with_key(config: &ProviderConfig, key: String) -> Result<Self, ProviderError> {
        if config.provider_id == ProviderKind::Mock {
            return Err(ProviderError::ConfigInvalid(
                "HTTP transport for a mock provider".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout_of(config))
            .build()
            .map_err(|e| ProviderError::ConfigInvalid(format!("HTTP client: {e}")))?;
        Ok(Self {
            endpoint: config.resolved_endpoint().unwrap_or_default(),
            config: config.clone(),
            key,
            client,
        })
    }

    fn auth_header(&self) -> (String, String) {
        let default = match self.config.provider_id {
            ProviderKind::AnthropicCompatible => "x-api-key",
            _ => "authorization",
        };
        let name = self.config.auth_header.as_deref().unwrap_or(default);
        if name.eq_ignore_ascii_case("authorization") {
            ("authorization".into(), format!("Bearer {}", self.key))
        } else {
            (name.to_ascii_lowercase(), self.key.clone())
        }
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest<'_>) -> Result<ChatReply, TransportError> {
        let anthropic = self.config.provider_id == ProviderKind::AnthropicCompatible;
        let body = if anthropic {
            anthropic_request_body(&self.config, request)
        } else {
            openai_request_body(&self.config, request)
        };
        let (name, value) = self.auth_header();
        let mut req = self
            .client
            .post(&self.endpoint)
            .header(name, value)
            .json(&body);
        if anthropic {
            req = req.header("anthropic-version", ANTHROPIC_VERSION);
        }
        let response = req.send().map_err(|e| {
            let msg = self.redact(&e.to_string());
            if e.is_builder() {
                TransportError::Config(msg)
            } else {
                TransportError::Retryable(msg)
            }
        })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| TransportError::Retryable(self.redact(&e.to_string())))?;
        if anthropic {
            classify_anthropic(status, &text)
        } else {
            classify_openai(status, &text)
        }
    }

    fn redact(&self, text: &str) -> String {
        if self.key.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.key, "[REDACTED]")
        }
    }
}
