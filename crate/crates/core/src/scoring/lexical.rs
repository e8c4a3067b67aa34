use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{ImageTextScorer, ScoreError, Scorer, TextScorer};
use crate::image::{ImagePayload, MediaType};
use crate::metrics::TokenizationPolicy;

/// Scale applied to the clamped cosine in the image–text score.
pub const CLIP_WEIGHT: f64 = 2.5;

const EMBED_DIM: usize = 64;

/// `CLIP_WEIGHT * max(cos(a, b), 0)`; zero vectors score 0.
pub fn clip_score(image_embedding: &[f64], text_embedding: &[f64]) -> f64 {
    assert_eq!(
        image_embedding.len(),
        text_embedding.len(),
        "embedding dims differ"
    );
    let dot: f64 = image_embedding
        .iter()
        .zip(text_embedding)
        .map(|(a, b)| a * b)
        .sum();
    let na = image_embedding.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = text_embedding.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    CLIP_WEIGHT * (dot / (na * nb)).max(0.0)
}

/// Token-level F1 over clipped multiset overlap.
///
/// Symmetric and bounded in `[0, 1]`. Two empty texts score 1, an empty text
/// against a non-empty one scores 0.
pub fn lexical_fallback_similarity(
    reference: &str,
    candidate: &str,
    policy: &TokenizationPolicy,
) -> f64 {
    let r = policy.tokenize(reference);
    let c = policy.tokenize(candidate);
    match (r.is_empty(), c.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &c {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    // F1 = 2PR/(P+R) = 2*overlap/(|r|+|c|)
    2.0 * overlap as f64 / (r.len() + c.len()) as f64
}

/// Offline scorer: token F1 for text pairs, hashed-feature embeddings for
/// image–text pairs.
///
/// The image score is deterministic but carries no semantic signal; it only
/// keeps the report pipeline runnable without a model server.
#[derive(Debug, Clone, Default)]
pub struct FallbackScorer {
    policy: TokenizationPolicy,
}

impl FallbackScorer {
    pub const ID: &'static str = "lexical-f1+hash-embed";

    pub fn new(policy: TokenizationPolicy) -> Self {
        Self { policy }
    }

    fn text_embedding(&self, text: &str) -> [f64; EMBED_DIM] {
        let mut v = [0.0; EMBED_DIM];
        for token in self.policy.tokenize(text) {
            let h = Sha256::digest(token.as_bytes());
            let slot = h[0] as usize % EMBED_DIM;
            v[slot] += if h[1] & 1 == 0 { 1.0 } else { -1.0 };
        }
        v
    }

    fn image_embedding(image: &ImagePayload) -> [f64; EMBED_DIM] {
        let digest = Sha256::digest(image.bytes());
        let mut v = [0.0; EMBED_DIM];
        let mut block = digest.to_vec();
        for chunk in v.chunks_mut(32) {
            for (x, b) in chunk.iter_mut().zip(&block) {
                *x = (*b as f64 - 127.5) / 127.5;
            }
            block = Sha256::digest(&block).to_vec();
        }
        v
    }
}

impl TextScorer for FallbackScorer {
    fn text_similarity(&self, reference: &str, candidate: &str) -> Result<f64, ScoreError> {
        Ok(lexical_fallback_similarity(
            reference,
            candidate,
            &self.policy,
        ))
    }
}

impl ImageTextScorer for FallbackScorer {
    fn image_text_similarity(
        &self,
        image: &ImagePayload,
        candidate: &str,
    ) -> Result<f64, ScoreError> {
        MediaType::sniff(image.bytes()).map_err(|e| ScoreError::ImageUndecodable(e.to_string()))?;
        Ok(clip_score(
            &Self::image_embedding(image),
            &self.text_embedding(candidate),
        ))
    }
}

impl Scorer for FallbackScorer {
    fn scorer_id(&self) -> &str {
        Self::ID
    }
}
