//! Scorer wire protocol.
//!
//! UTF-8 JSON objects, one per line, in both directions. The client opens
//! with `{"op":"hello"}` and the server answers
//! `{"scorer_id":"...","protocol":1}` before any scoring traffic.
//!
//! Requests: `{"id", "op": "text_sim"|"image_text_sim", "reference"?,
//! "candidate", "image_b64"?}`. Responses: `{"id", "score", "scorer_id"}`,
//! or `{"id", "error"}` when a single request cannot be served. Responses
//! may arrive in any order; ids correlate them.

use serde::{Deserialize, Serialize};

use super::ScoreError;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOp {
    TextSim,
    ImageTextSim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub op: ScoreOp,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<String>,
    pub candidate: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_b64: Option<String>,
}

impl ScoreRequest {
    pub fn text(id: String, reference: &str, candidate: &str) -> Self {
        Self {
            id,
            op: ScoreOp::TextSim,
            reference: Some(reference.to_string()),
            candidate: candidate.to_string(),
            image_b64: None,
        }
    }

    pub fn image_text(id: String, image_b64: String, candidate: &str) -> Self {
        Self {
            id,
            op: ScoreOp::ImageTextSim,
            reference: None,
            candidate: candidate.to_string(),
            image_b64: Some(image_b64),
        }
    }

    /// TextSim needs a reference; ImageTextSim needs an image.
    pub fn validate(&self) -> Result<(), ScoreError> {
        match (self.op, &self.reference, &self.image_b64) {
            (ScoreOp::TextSim, Some(_), _) | (ScoreOp::ImageTextSim, _, Some(_)) => Ok(()),
            (ScoreOp::TextSim, None, _) => Err(ScoreError::Protocol(
                "text_sim request without reference".into(),
            )),
            (ScoreOp::ImageTextSim, _, None) => Err(ScoreError::Protocol(
                "image_text_sim request without image_b64".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub score: f64,
    pub scorer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerMessage {
    Score(ScoreResponse),
    Error(ErrorResponse),
    Hello(HelloResponse),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloRequest {
    pub op: String,
}

impl Default for HelloRequest {
    fn default() -> Self {
        Self { op: "hello".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloResponse {
    pub scorer_id: String,
    pub protocol: u32,
}

impl HelloResponse {
    pub fn check(self) -> Result<String, ScoreError> {
        if self.protocol != PROTOCOL_VERSION {
            return Err(ScoreError::Protocol(format!(
                "server speaks protocol {}, expected {PROTOCOL_VERSION}",
                self.protocol
            )));
        }
        Ok(self.scorer_id)
    }
}

/// Outcome of one request as seen by the caller.
pub(crate) fn interpret(message: ServerMessage) -> Option<(String, Result<f64, ScoreError>)> {
    match message {
        ServerMessage::Score(r) if r.score.is_finite() => Some((r.id, Ok(r.score))),
        ServerMessage::Score(r) => {
            let err = ScoreError::Protocol(format!("non-finite score for {}", r.id));
            Some((r.id, Err(err)))
        }
        ServerMessage::Error(e) => {
            let err = if e.error.to_lowercase().contains("decod") {
                ScoreError::ImageUndecodable(e.error)
            } else {
                ScoreError::Remote {
                    id: e.id.clone(),
                    message: e.error,
                }
            };
            Some((e.id, Err(err)))
        }
        ServerMessage::Hello(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let r = ScoreRequest::text("r1".into(), "a", "b");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":"r1","op":"text_sim","reference":"a","candidate":"b"}"#
        );
        let r = ScoreRequest::image_text("r2".into(), "AAAA".into(), "b");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"id":"r2","op":"image_text_sim","candidate":"b","image_b64":"AAAA"}"#
        );
        assert_eq!(
            serde_json::to_string(&HelloRequest::default()).unwrap(),
            r#"{"op":"hello"}"#
        );
    }

    #[test]
    fn request_validation() {
        let mut r = ScoreRequest::text("r1".into(), "a", "b");
        assert!(r.validate().is_ok());
        r.reference = None;
        assert!(r.validate().is_err());
        let mut r = ScoreRequest::image_text("r2".into(), "AAAA".into(), "b");
        assert!(r.validate().is_ok());
        r.image_b64 = None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn server_messages_decode() {
        let m: ServerMessage =
            serde_json::from_str(r#"{"id":"x","score":-1.25,"scorer_id":"bleurt-20"}"#).unwrap();
        assert_eq!(interpret(m), Some(("x".into(), Ok(-1.25))));
        let m: ServerMessage = serde_json::from_str(r#"{"id":"y","error":"boom"}"#).unwrap();
        assert!(matches!(interpret(m), Some((id, Err(ScoreError::Remote { .. }))) if id == "y"));
        let m: ServerMessage =
            serde_json::from_str(r#"{"id":"z","error":"image could not be decoded"}"#).unwrap();
        assert!(matches!(
            interpret(m),
            Some((_, Err(ScoreError::ImageUndecodable(_))))
        ));
        let m: ServerMessage = serde_json::from_str(r#"{"scorer_id":"s","protocol":1}"#).unwrap();
        assert!(matches!(m, ServerMessage::Hello(_)));
    }

    #[test]
    fn hello_version_check() {
        let ok = HelloResponse {
            scorer_id: "s".into(),
            protocol: 1,
        };
        assert_eq!(ok.check().unwrap(), "s");
        let bad = HelloResponse {
            scorer_id: "s".into(),
            protocol: 2,
        };
        assert!(bad.check().is_err());
    }
}
