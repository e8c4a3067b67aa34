use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Serialize;

use super::protocol::{interpret, HelloRequest, HelloResponse, ScoreRequest, ServerMessage};
use super::{ImageTextScorer, ScoreError, Scorer, TextScorer};
use crate::image::ImagePayload;

const CONNECT_ATTEMPTS: u32 = 3;

/// Scorer reached via `POST <base>/score` with the line-protocol JSON bodies.
pub struct HttpScorer {
    client: reqwest::blocking::Client,
    url: String,
    scorer_id: String,
    next_id: AtomicU64,
}

impl HttpScorer {
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, ScoreError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScoreError::Unavailable(e.to_string()))?;
        let url = format!("{}/score", base_url.trim_end_matches('/'));
        let hello: HelloResponse = post(&client, &url, &HelloRequest::default())?
            .json()
            .map_err(|e| ScoreError::Protocol(format!("bad handshake reply: {e}")))?;
        Ok(Self {
            client,
            url,
            scorer_id: hello.check()?,
            next_id: AtomicU64::new(0),
        })
    }

    fn request(&self, request: ScoreRequest) -> Result<f64, ScoreError> {
        request.validate()?;
        let message: ServerMessage = post(&self.client, &self.url, &request)?
            .json()
            .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        match interpret(message) {
            Some((id, reply)) if id == request.id => reply,
            Some((id, _)) => Err(ScoreError::Protocol(format!(
                "response id `{id}` does not match request `{}`",
                request.id
            ))),
            None => Err(ScoreError::Protocol("unexpected handshake reply".into())),
        }
    }

    fn fresh_id(&self) -> String {
        format!("h{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }
}

fn post<T: Serialize>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &T,
) -> Result<reqwest::blocking::Response, ScoreError> {
    let mut last = String::new();
    for attempt in 0..CONNECT_ATTEMPTS {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(250 << attempt));
        }
        match client.post(url).json(body).send() {
            Ok(resp) if resp.status().is_success() => return Ok(resp),
            Ok(resp) if resp.status().is_server_error() => last = format!("HTTP {}", resp.status()),
            Ok(resp) => {
                return Err(ScoreError::Protocol(format!(
                    "HTTP {} from {url}",
                    resp.status()
                )))
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(ScoreError::Unavailable(format!("{url}: {last}")))
}

impl TextScorer for HttpScorer {
    fn text_similarity(&self, reference: &str, candidate: &str) -> Result<f64, ScoreError> {
        self.request(ScoreRequest::text(self.fresh_id(), reference, candidate))
    }
}

impl ImageTextScorer for HttpScorer {
    fn image_text_similarity(
        &self,
        image: &ImagePayload,
        candidate: &str,
    ) -> Result<f64, ScoreError> {
        let request = ScoreRequest::image_text(self.fresh_id(), image.to_base64(), candidate);
        self.request(request).map(|s| s.max(0.0))
    }
}

impl Scorer for HttpScorer {
    fn scorer_id(&self) -> &str {
        &self.scorer_id
    }
}
