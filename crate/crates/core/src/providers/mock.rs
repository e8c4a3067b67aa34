use rand::seq::SliceRandom;
use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::SplitMix64;
use sha2::{Digest, Sha256};

use super::{
    ChatReply, ChatRequest, ChatTransport, GenerationOutcome, GenerationStatus, ProviderConfig,
};
use crate::prompting::{CaptionSet, PromptBundle, Strategy, CAPTIONS_PER_INPUT};
use crate::relations::relation_catalog;

const WORDS: &[&str] = &[
    "a", "the", "quiet", "morning", "street", "dog", "window", "light", "rain", "city", "old",
    "friend", "waiting", "under", "bright", "sky", "coffee", "table", "after", "long", "day",
    "small", "garden", "river", "walk", "home", "late", "evening", "people", "laughing", "near",
    "market", "blue", "door", "open", "road", "cat", "asleep", "on", "warm", "sofa", "children",
    "play", "in", "park", "sunset", "over", "hills", "just", "another", "weekend", "finally",
];

fn rng_for(seed: u64, bundle: &PromptBundle) -> SplitMix64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(bundle.sample_id.as_bytes());
    h.update([0]);
    h.update(bundle.strategy.as_str().as_bytes());
    h.update([0]);
    h.update(bundle.task.as_str().as_bytes());
    let digest = h.finalize();
    SplitMix64::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Five distinct captions drawn from a fixed word pool, seeded by
/// `(seed, sample id, strategy, task)`. For the image+caption task the
/// ground-truth words join the pool.
pub fn mock_captions(seed: u64, bundle: &PromptBundle) -> CaptionSet {
    let mut rng = rng_for(seed, bundle);
    let mut pool: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
    if let Some(caption) = &bundle.caption {
        pool.extend(caption.split_whitespace().map(str::to_string));
    }
    let mut captions: Vec<String> = Vec::with_capacity(CAPTIONS_PER_INPUT);
    while captions.len() < CAPTIONS_PER_INPUT {
        let len = rng.gen_range(5..=10);
        let words: Vec<&str> = (0..len)
            .map(|_| pool.choose(&mut rng).expect("pool is non-empty").as_str())
            .collect();
        let text = words.join(" ");
        if !captions.contains(&text) {
            captions.push(text);
        }
    }
    match bundle.strategy {
        Strategy::Baseline => CaptionSet::ordered(captions),
        Strategy::Rona => CaptionSet::by_relation(relation_catalog().iter().copied().zip(captions)),
    }
    .expect("mock captions satisfy the schema")
}

/// Offline generation: always `Ok` after one attempt.
pub fn mock_generate(seed: u64, bundle: &PromptBundle) -> GenerationOutcome {
    let set = mock_captions(seed, bundle);
    GenerationOutcome {
        status: GenerationStatus::Ok,
        raw_text: Some(set.to_response_json()),
        caption_set: Some(set),
        attempts: 1,
        latency_ms: 0,
        error: None,
    }
}

/// Transport answering every request with [`mock_captions`].
#[derive(Debug, Clone)]
pub struct MockTransport {
    seed: u64,
}

impl MockTransport {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Seed derived from the configured mock seed and the model id, so two
    /// mock models in one run answer differently.
    pub fn for_config(config: &ProviderConfig) -> Self {
        let digest = Sha256::digest(config.model_id.as_bytes());
        let model = u64::from_le_bytes(digest[..8].try_into().unwrap());
        Self::new(config.mock_seed ^ model)
    }
}

impl ChatTransport for MockTransport {
    fn send(&self, request: &ChatRequest<'_>) -> Result<ChatReply, super::TransportError> {
        Ok(ChatReply::Text(
            mock_captions(self.seed, request.bundle).to_response_json(),
        ))
    }
}
