//! Scorer abstraction over learned text and image–text similarity models.
//!
//! Learned scorers run out of process and are reached through a
//! line-delimited JSON protocol (see [`protocol`]). [`FallbackScorer`] is a
//! pure, offline stand-in used for tests and dry runs.

mod client;
mod http;
mod lexical;
pub mod protocol;

use crate::image::ImagePayload;

pub use client::{LineScorer, DEFAULT_BATCH_WINDOW};
pub use http::HttpScorer;
pub use lexical::{clip_score, lexical_fallback_similarity, FallbackScorer, CLIP_WEIGHT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("image could not be decoded: {0}")]
    ImageUndecodable(String),
    #[error("scorer rejected request {id}: {message}")]
    Remote { id: String, message: String },
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
}

/// Reference/candidate text similarity (the BLEURT slot).
///
/// Learned text scorers are not symmetric, so argument order matters.
pub trait TextScorer: Send + Sync {
    fn text_similarity(&self, reference: &str, candidate: &str) -> Result<f64, ScoreError>;

    /// Scores many pairs; must equal scoring each pair in turn.
    fn text_similarity_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        pairs
            .iter()
            .map(|(r, c)| self.text_similarity(r, c))
            .collect()
    }
}

/// Image–caption similarity (the CLIPScore slot). Scores are never negative.
pub trait ImageTextScorer: Send + Sync {
    fn image_text_similarity(
        &self,
        image: &ImagePayload,
        candidate: &str,
    ) -> Result<f64, ScoreError>;

    fn image_text_similarity_batch(
        &self,
        image: &ImagePayload,
        candidates: &[&str],
    ) -> Result<Vec<f64>, ScoreError> {
        candidates
            .iter()
            .map(|c| self.image_text_similarity(image, c))
            .collect()
    }
}

/// A backend serving both similarity queries under one identity.
pub trait Scorer: TextScorer + ImageTextScorer {
    /// Checkpoint identifier, recorded in run manifests.
    fn scorer_id(&self) -> &str;
}
