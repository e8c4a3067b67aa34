//! Multimodal chat providers: a uniform client with rate limiting, retry
//! with repair prompts, and safety-rejection detection.
//!
//! A [`ProviderClient`] pairs a [`ProviderConfig`] with a [`ChatTransport`].
//! The transport only moves one request and classifies the raw reply; the
//! client owns pacing, parsing, repair and backoff, so mock and live
//! providers follow the same control flow.

mod mock;
mod pacing;
mod transcript;
mod wire;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::image::{ImagePayload, MAX_UPLOAD_SIDE};
use crate::prompting::{parse_response, CaptionSet, PromptBundle};

pub use mock::{mock_captions, mock_generate, MockTransport};
pub use pacing::{Backoff, Clock, RateLimiter, SystemClock, VirtualClock};
pub use transcript::Transcript;
pub use wire::{
    anthropic_request_body, classify_anthropic, classify_openai, openai_request_body,
    HttpTransport, ANTHROPIC_VERSION, DEFAULT_ANTHROPIC_MAX_TOKENS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    OpenaiCompatible,
    AnthropicCompatible,
    Mock,
}

fn default_max_retries() -> u32 {
    3
}

/// Requests per minute for live providers that do not set a limit.
pub const DEFAULT_REQUESTS_PER_MINUTE: u32 = 60;

fn default_timeout() -> u64 {
    120
}

/// One model endpoint. Holds the *name* of the environment variable with
/// the API key, never the key itself, so it can be written to manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider_id: ProviderKind,
    /// Row label in reports, e.g. `GPT-4o`. Defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub model_id: String,
    /// Full URL of the chat endpoint. Defaults to the vendor's public API.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Header carrying the key. Defaults to `Authorization: Bearer` for
    /// OpenAI-compatible and `x-api-key` for Anthropic-compatible APIs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_header: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Unset means [`DEFAULT_REQUESTS_PER_MINUTE`] for live providers and
    /// no limit for the mock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Extra request fields merged into every request body.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub mock_seed: u64,
}

impl ProviderConfig {
    pub fn mock(model_id: &str, label: &str) -> Self {
        Self {
            provider_id: ProviderKind::Mock,
            label: Some(label.to_string()),
            model_id: model_id.to_string(),
            endpoint: None,
            api_key_env: None,
            auth_header: None,
            max_retries: default_max_retries(),
            requests_per_minute: None,
            timeout_secs: default_timeout(),
            params: BTreeMap::new(),
            mock_seed: 0,
        }
    }

    /// Effective rate limit; `None` means unlimited.
    pub fn rate_limit(&self) -> Option<u32> {
        match (self.requests_per_minute, self.provider_id) {
            (Some(n), _) => Some(n),
            (None, ProviderKind::Mock) => None,
            (None, _) => Some(DEFAULT_REQUESTS_PER_MINUTE),
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.model_id)
    }

    pub fn resolved_endpoint(&self) -> Option<String> {
        match self.provider_id {
            ProviderKind::Mock => None,
            ProviderKind::OpenaiCompatible => Some(
                self.endpoint
                    .clone()
                    .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into()),
            ),
            ProviderKind::AnthropicCompatible => Some(
                self.endpoint
                    .clone()
                    .unwrap_or_else(|| "https://api.anthropic.com/v1/messages".into()),
            ),
        }
    }

    /// Request fields actually sent besides the conversation, including
    /// defaults the harness fills in.
    pub fn effective_params(&self) -> BTreeMap<String, Value> {
        let mut params = self.params.clone();
        if self.provider_id == ProviderKind::AnthropicCompatible {
            params
                .entry("max_tokens".into())
                .or_insert(Value::from(DEFAULT_ANTHROPIC_MAX_TOKENS));
        }
        params
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::ConfigInvalid(m));
        if self.model_id.trim().is_empty() {
            return bad("model_id must not be empty".into());
        }
        if self.requests_per_minute == Some(0) {
            return bad(format!(
                "{}: requests_per_minute must be positive",
                self.model_id
            ));
        }
        if self.timeout_secs == 0 {
            return bad(format!("{}: timeout_secs must be positive", self.model_id));
        }
        for reserved in ["model", "messages", "system"] {
            if self.params.contains_key(reserved) {
                return bad(format!(
                    "{}: params may not override `{reserved}`",
                    self.model_id
                ));
            }
        }
        if self.provider_id == ProviderKind::Mock {
            return Ok(());
        }
        let endpoint = self.resolved_endpoint().unwrap_or_default();
        match reqwest::Url::parse(&endpoint) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => {}
            _ => return bad(format!("{}: invalid endpoint `{endpoint}`", self.model_id)),
        }
        if self
            .api_key_env
            .as_deref()
            .is_none_or(|v| v.trim().is_empty())
        {
            return bad(format!(
                "{}: api_key_env is required for live providers",
                self.model_id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("invalid provider configuration: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenerationStatus {
    Ok,
    SafetyRejected,
    TransportFailed,
    SchemaFailed,
}

/// Result of one generation request, after retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub status: GenerationStatus,
    /// Last reply text received, if any.
    pub raw_text: Option<String>,
    pub caption_set: Option<CaptionSet>,
    pub attempts: u32,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == GenerationStatus::Ok
    }

    fn failed(status: GenerationStatus, raw_text: Option<String>, error: Option<String>) -> Self {
        Self {
            status,
            raw_text,
            caption_set: None,
            attempts: 0,
            latency_ms: 0,
            error,
        }
    }
}

/// What a provider sends back for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatReply {
    Text(String),
    /// The provider flagged or declined the request on content grounds.
    Refused(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Rate limiting, server errors, timeouts, connection failures.
    #[error("retryable: {0}")]
    Retryable(String),
    /// The request itself was rejected; resending it will not help.
    #[error("rejected: {0}")]
    Rejected(String),
    /// Credentials or endpoint are wrong.
    #[error("configuration: {0}")]
    Config(String),
}

/// One request as seen by a transport.
pub struct ChatRequest<'a> {
    pub bundle: &'a PromptBundle,
    /// The bundle image, downscaled if it exceeded the upload limit.
    pub image: &'a ImagePayload,
    /// Earlier replies that failed validation. Each is replayed as an
    /// assistant turn followed by the repair instruction.
    pub failed_replies: &'a [String],
}

pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<ChatReply, TransportError>;

    /// Removes secret material from text bound for logs.
    fn redact(&self, text: &str) -> String {
        text.to_string()
    }
}

/// Anything that turns prompt bundles into generation outcomes.
pub trait CaptionProvider: Send + Sync {
    fn config(&self) -> &ProviderConfig;

    fn generate(&self, bundle: &PromptBundle) -> Result<GenerationOutcome, ProviderError>;

    /// Requests sent to the transport so far.
    fn calls(&self) -> usize;
}

const REFUSAL_PHRASES: &[&str] = &[
    "i can't help with",
    "i cannot help with",
    "i can't assist with",
    "i cannot assist with",
    "i'm unable to help",
    "i am unable to help",
    "i'm not able to help",
    "i am not able to help",
    "i can't provide captions",
    "i cannot provide captions",
    "i can't create captions",
    "i cannot create captions",
    "i can't write captions",
    "i cannot write captions",
    "i won't be able to",
    "violates our content policy",
    "against my content guidelines",
];

/// Conservative check for a model declining in prose. Only applied to
/// replies that contain no valid caption JSON.
pub fn looks_like_refusal(text: &str) -> bool {
    let lowered = text.to_lowercase().replace('\u{2019}', "'");
    REFUSAL_PHRASES.iter().any(|p| lowered.contains(p))
}

pub struct ProviderClient {
    config: ProviderConfig,
    transport: Arc<dyn ChatTransport>,
    clock: Arc<dyn Clock>,
    limiter: Option<RateLimiter>,
    backoff: Backoff,
    transcript: Option<Arc<Transcript>>,
    calls: AtomicUsize,
}

impl ProviderClient {
    /// Builds the transport named by `config.provider_id`. Live providers
    /// read their API key from the environment here.
    pub fn from_config(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let transport: Arc<dyn ChatTransport> = match config.provider_id {
            ProviderKind::Mock => Arc::new(MockTransport::for_config(&config)),
            _ => Arc::new(HttpTransport::from_config(&config)?),
        };
        Self::with_transport(config, transport, Arc::new(SystemClock::default()))
    }

    pub fn with_transport(
        config: ProviderConfig,
        transport: Arc<dyn ChatTransport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            limiter: config
                .rate_limit()
                .map(|n| RateLimiter::new(n, clock.clone())),
            config,
            transport,
            clock,
            backoff: Backoff::default(),
            transcript: None,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_transcript(mut self, transcript: Arc<Transcript>) -> Self {
        self.transcript = Some(transcript);
        self
    }

    /// Opens a JSONL transcript at `path` (appending).
    pub fn with_transcript_file(self, path: &Path) -> std::io::Result<Self> {
        Ok(self.with_transcript(Arc::new(Transcript::open(path)?)))
    }

    fn log(&self, bundle: &PromptBundle, attempt: u32, event: &str, text: &str) {
        if let Some(t) = &self.transcript {
            t.append(
                &self.config.model_id,
                bundle,
                attempt,
                event,
                &self.transport.redact(text),
            );
        }
    }

    fn run(&self, bundle: &PromptBundle) -> Result<GenerationOutcome, ProviderError> {
        let image = match bundle.image.fit_within(MAX_UPLOAD_SIDE) {
            Ok(img) => img,
            Err(e) => {
                return Ok(GenerationOutcome::failed(
                    GenerationStatus::TransportFailed,
                    None,
                    Some(format!("image not sendable: {e}")),
                ))
            }
        };
        let max_attempts = self.config.max_retries + 1;
        let mut failed_replies: Vec<String> = Vec::new();
        let mut last_status = GenerationStatus::TransportFailed;
        let mut last_error = None;
        let mut attempts = 0;
        while attempts < max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            attempts += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            let request = ChatRequest {
                bundle,
                image: &image,
                failed_replies: &failed_replies,
            };
            match self.transport.send(&request) {
                Ok(ChatReply::Text(text)) => match parse_response(bundle.strategy, &text) {
                    Ok(set) => {
                        self.log(bundle, attempts, "ok", &text);
                        return Ok(GenerationOutcome {
                            status: GenerationStatus::Ok,
                            raw_text: Some(text),
                            caption_set: Some(set),
                            attempts,
                            latency_ms: 0,
                            error: None,
                        });
                    }
                    Err(_) if looks_like_refusal(&text) => {
                        self.log(bundle, attempts, "refused", &text);
                        let mut out = GenerationOutcome::failed(
                            GenerationStatus::SafetyRejected,
                            Some(text),
                            Some("model declined the request".into()),
                        );
                        out.attempts = attempts;
                        return Ok(out);
                    }
                    Err(e) => {
                        self.log(bundle, attempts, "schema", &text);
                        debug!("{} {}: {e}", self.config.model_id, bundle.sample_id);
                        last_status = GenerationStatus::SchemaFailed;
                        last_error = Some(e.to_string());
                        failed_replies.push(text);
                    }
                },
                Ok(ChatReply::Refused(detail)) => {
                    self.log(bundle, attempts, "refused", &detail);
                    let mut out = GenerationOutcome::failed(
                        GenerationStatus::SafetyRejected,
                        failed_replies.pop(),
                        Some(self.transport.redact(&detail)),
                    );
                    out.attempts = attempts;
                    return Ok(out);
                }
                Err(TransportError::Retryable(msg)) => {
                    let msg = self.transport.redact(&msg);
                    self.log(bundle, attempts, "retryable", &msg);
                    last_status = GenerationStatus::TransportFailed;
                    last_error = Some(msg);
                    if attempts < max_attempts {
                        let jitter: f64 = rand::thread_rng().gen();
                        self.clock.sleep(self.backoff.delay(attempts - 1, jitter));
                    }
                }
                Err(TransportError::Rejected(msg)) => {
                    let msg = self.transport.redact(&msg);
                    self.log(bundle, attempts, "failed", &msg);
                    let mut out = GenerationOutcome::failed(
                        GenerationStatus::TransportFailed,
                        failed_replies.pop(),
                        Some(msg),
                    );
                    out.attempts = attempts;
                    return Ok(out);
                }
                Err(TransportError::Config(msg)) => {
                    let msg = self.transport.redact(&msg);
                    self.log(bundle, attempts, "config", &msg);
                    return Err(ProviderError::ConfigInvalid(format!(
                        "{}: {msg}",
                        self.config.model_id
                    )));
                }
            }
        }
        warn!(
            "{} {}: giving up after {attempts} attempt(s): {}",
            self.config.model_id,
            bundle.sample_id,
            last_error.as_deref().unwrap_or("unknown error")
        );
        let mut out = GenerationOutcome::failed(last_status, failed_replies.pop(), last_error);
        out.attempts = attempts;
        Ok(out)
    }
}

impl CaptionProvider for ProviderClient {
    fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<GenerationOutcome, ProviderError> {
        let start = self.clock.now();
        let mut outcome = self.run(bundle)?;
        outcome.latency_ms = self.clock.now().saturating_sub(start).as_millis() as u64;
        Ok(outcome)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Rejects credentials problems before any sample is processed.
pub fn check_credentials(config: &ProviderConfig) -> Result<(), ProviderError> {
    config.validate()?;
    if let (ProviderKind::OpenaiCompatible | ProviderKind::AnthropicCompatible, Some(var)) =
        (config.provider_id, config.api_key_env.as_deref())
    {
        match std::env::var(var) {
            Ok(v) if !v.trim().is_empty() => {}
            _ => {
                return Err(ProviderError::ConfigInvalid(format!(
                    "environment variable {var} is not set (API key for {})",
                    config.model_id
                )))
            }
        }
    }
    Ok(())
}

/// Timeout as a [`Duration`].
pub(crate) fn timeout_of(config: &ProviderConfig) -> Duration {
    Duration::from_secs(config.timeout_secs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::solid_png;
    use crate::prompting::{Strategy, Task, REPAIR_INSTRUCTION};
    use std::collections::VecDeque;
    use std::sync::Mutex;

    /// Replays canned replies and records what it was sent.
    struct Scripted {
        replies: Mutex<VecDeque<Result<ChatReply, TransportError>>>,
        seen_repairs: Mutex<Vec<usize>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<ChatReply, TransportError>>) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies.into()),
                seen_repairs: Mutex::new(Vec::new()),
            })
        }
    }

    impl ChatTransport for Scripted {
        fn send(&self, request: &ChatRequest<'_>) -> Result<ChatReply, TransportError> {
            self.seen_repairs
                .lock()
                .unwrap()
                .push(request.failed_replies.len());
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .expect("script exhausted")
        }
    }

    fn text(s: &str) -> Result<ChatReply, TransportError> {
        Ok(ChatReply::Text(s.to_string()))
    }

    fn bundle(strategy: Strategy) -> PromptBundle {
        let image = ImagePayload::from_bytes(solid_png(4, 4, [9, 9, 9])).unwrap();
        PromptBundle::new("s1", strategy, Task::ImageOnly, None, image).unwrap()
    }

    fn client(transport: Arc<Scripted>, max_retries: u32) -> (ProviderClient, Arc<VirtualClock>) {
        let clock = Arc::new(VirtualClock::default());
        let mut config = ProviderConfig::mock("fake", "Fake");
        config.max_retries = max_retries;
        (
            ProviderClient::with_transport(config, transport, clock.clone()).unwrap(),
            clock,
        )
    }

    const VALID: &str = r#"["one", "two", "three", "four", "five"]"#;

    #[test]
    fn client_requests_respect_rate_limit() {
        let clock = Arc::new(VirtualClock::default());
        let mut config = ProviderConfig::mock("fake", "Fake");
        config.requests_per_minute = Some(3);
        let replies = (0..7).map(|_| text(VALID)).collect();
        let c =
            ProviderClient::with_transport(config, Scripted::new(replies), clock.clone()).unwrap();
        for _ in 0..7 {
            assert!(c.generate(&bundle(Strategy::Baseline)).unwrap().is_ok());
        }
        // Requests 4..6 wait for the first window, request 7 for the second.
        assert_eq!(clock.now(), Duration::from_secs(120));
        assert_eq!(c.calls(), 7);
    }

    #[test]
    fn mock_is_unlimited_by_default() {
        assert_eq!(ProviderConfig::mock("m", "M").rate_limit(), None);
        let mut live = ProviderConfig::mock("m", "M");
        live.provider_id = ProviderKind::OpenaiCompatible;
        assert_eq!(live.rate_limit(), Some(DEFAULT_REQUESTS_PER_MINUTE));
    }

    #[test]
    fn repairs_until_valid() {
        let script = Scripted::new(vec![
            text(r#"["a","b"]"#),
            text(r#"["a","b"]"#),
            text(VALID),
        ]);
        let (c, _) = client(script.clone(), 2);
        let out = c.generate(&bundle(Strategy::Baseline)).unwrap();
        assert_eq!(out.status, GenerationStatus::Ok);
        assert_eq!(out.attempts, 3);
        assert_eq!(out.caption_set.unwrap().captions()[4], "five");
        assert_eq!(*script.seen_repairs.lock().unwrap(), [0, 1, 2]);
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn schema_failure_is_bounded() {
        let script = Scripted::new(vec![text("{}"), text("nope"), text("[]")]);
        let (c, clock) = client(script, 2);
        let out = c.generate(&bundle(Strategy::Rona)).unwrap();
        assert_eq!(out.status, GenerationStatus::SchemaFailed);
        assert_eq!(out.attempts, 3);
        assert_eq!(out.raw_text.as_deref(), Some("[]"));
        assert!(out.caption_set.is_none());
        // Schema repairs are immediate; only transport errors back off.
        assert!(clock.sleeps().is_empty());
    }

    #[test]
    fn safety_rejection_is_not_retried() {
        let script = Scripted::new(vec![Ok(ChatReply::Refused("content_filter".into()))]);
        let (c, _) = client(script, 5);
        let out = c.generate(&bundle(Strategy::Baseline)).unwrap();
        assert_eq!(out.status, GenerationStatus::SafetyRejected);
        assert_eq!(out.attempts, 1);
        assert!(out.caption_set.is_none());
    }

    #[test]
    fn prose_refusal_is_a_safety_rejection() {
        let script = Scripted::new(vec![text("I’m sorry, but I can’t help with that image.")]);
        let (c, _) = client(script, 3);
        let out = c.generate(&bundle(Strategy::Baseline)).unwrap();
        assert_eq!(out.status, GenerationStatus::SafetyRejected);
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn valid_json_wins_over_refusal_phrases() {
        let reply = r#"["I can't help with my homework", "b", "c", "d", "e"]"#;
        let (c, _) = client(Scripted::new(vec![text(reply)]), 0);
        assert!(c.generate(&bundle(Strategy::Baseline)).unwrap().is_ok());
    }

    #[test]
    fn transport_errors_back_off_then_fail() {
        let err = || Err(TransportError::Retryable("HTTP 503".into()));
        let (c, clock) = client(Scripted::new(vec![err(), err(), err()]), 2);
        let out = c.generate(&bundle(Strategy::Baseline)).unwrap();
        assert_eq!(out.status, GenerationStatus::TransportFailed);
        assert_eq!(out.attempts, 3);
        let sleeps = clock.sleeps();
        assert_eq!(sleeps.len(), 2);
        assert!(sleeps[0] >= Duration::from_millis(500) && sleeps[0] <= Duration::from_secs(1));
        assert!(sleeps[1] >= Duration::from_secs(1) && sleeps[1] <= Duration::from_secs(2));
        assert_eq!(
            out.latency_ms as u128,
            sleeps.iter().sum::<Duration>().as_millis()
        );
    }

    #[test]
    fn transport_recovers() {
        let script = Scripted::new(vec![
            Err(TransportError::Retryable("429".into())),
            text(VALID),
        ]);
        let (c, _) = client(script, 1);
        let out = c.generate(&bundle(Strategy::Baseline)).unwrap();
        assert!(out.is_ok());
        assert_eq!(out.attempts, 2);
    }

    #[test]
    fn rejected_request_stops_immediately() {
        let script = Scripted::new(vec![Err(TransportError::Rejected("HTTP 400".into()))]);
        let (c, _) = client(script, 4);
        let out = c.generate(&bundle(Strategy::Baseline)).unwrap();
        assert_eq!(out.status, GenerationStatus::TransportFailed);
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn auth_failure_is_a_config_error() {
        let script = Scripted::new(vec![Err(TransportError::Config("HTTP 401".into()))]);
        let (c, _) = client(script, 4);
        let err = c.generate(&bundle(Strategy::Baseline)).unwrap_err();
        assert!(matches!(err, ProviderError::ConfigInvalid(m) if m.contains("401")));
    }

    #[test]
    fn zero_retries_means_one_attempt() {
        let (c, _) = client(Scripted::new(vec![text("[]")]), 0);
        assert_eq!(c.generate(&bundle(Strategy::Baseline)).unwrap().attempts, 1);
    }

    #[test]
    fn config_validation() {
        let ok = ProviderConfig::mock("m", "M");
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.model_id = " ".into();
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.requests_per_minute = Some(0);
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.provider_id = ProviderKind::OpenaiCompatible;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("api_key_env"));
        c.api_key_env = Some("KEY".into());
        assert!(c.validate().is_ok());
        c.endpoint = Some("ftp://x".into());
        assert!(c.validate().is_err());
        let mut c = ok;
        c.params.insert("messages".into(), Value::Null);
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_key_names_the_variable() {
        let mut c = ProviderConfig::mock("gpt-4o-2024-11-20", "GPT-4o");
        c.provider_id = ProviderKind::OpenaiCompatible;
        c.api_key_env = Some("RONA_TEST_SURELY_UNSET_KEY".into());
        let err = check_credentials(&c).unwrap_err().to_string();
        assert!(err.contains("RONA_TEST_SURELY_UNSET_KEY"), "{err}");
        assert!(ProviderClient::from_config(c).is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let toml_src = r#"
            provider_id = "anthropic-compatible"
            label = "Claude"
            model_id = "claude-3-5-sonnet-v2@20241022"
            api_key_env = "ANTHROPIC_API_KEY"
            requests_per_minute = 50
        "#;
        let c: ProviderConfig = toml::from_str(toml_src).unwrap();
        assert_eq!(c.max_retries, 3);
        assert_eq!(c.rate_limit(), Some(50));
        assert_eq!(c.label(), "Claude");
        assert_eq!(
            c.effective_params()["max_tokens"],
            DEFAULT_ANTHROPIC_MAX_TOKENS
        );
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ProviderConfig>(&json).unwrap(), c);
        assert!(toml::from_str::<ProviderConfig>(
            "model_id = \"x\"\nprovider_id = \"mock\"\napi_key = \"s\""
        )
        .is_err());
    }

    #[test]
    fn repair_instruction_text() {
        assert_eq!(
            REPAIR_INSTRUCTION,
            "Return only the JSON in the required format."
        );
    }
}
