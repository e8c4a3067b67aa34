//! Diversity and relevance metrics over generated caption sets.
//!
//! Four quantities are reported per setting: mean similarity to the
//! ground-truth caption (BLEURT slot), mean image–caption similarity
//! (CLIPScore slot), mean pairwise similarity among the generated captions
//! (Self-BLEURT slot, lower is more diverse) and Div-2.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::image::ImagePayload;
use crate::scoring::{ImageTextScorer, ScoreError, TextScorer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("self-similarity needs at least two captions, got {0}")]
    TooFewCaptions(usize),
    #[error("no samples to aggregate")]
    EmptySetting,
    #[error("scorer returned a non-finite value")]
    NonFinite,
    #[error(transparent)]
    Scorer(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Splitter {
    #[default]
    Whitespace,
}

/// How captions are turned into tokens. Fixed for a run and recorded in its
/// manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizationPolicy {
    pub lowercase: bool,
    pub punctuation_stripped: bool,
    #[serde(default)]
    pub splitter: Splitter,
}

impl Default for TokenizationPolicy {
    fn default() -> Self {
        Self {
            lowercase: true,
            punctuation_stripped: true,
            splitter: Splitter::Whitespace,
        }
    }
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

impl TokenizationPolicy {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        let text: String = if self.punctuation_stripped {
            text.chars().filter(|c| !is_punctuation(*c)).collect()
        } else {
            text
        };
        match self.splitter {
            Splitter::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        }
    }
}

/// Unit over which Div-2 counts bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Div2Scope {
    /// Bigrams of all captions of a sample are pooled into one multiset.
    #[default]
    Pooled,
    /// Distinct/total is computed per caption and averaged over captions
    /// that have at least one bigram.
    PerCaption,
}

fn bigrams(tokens: &[String]) -> impl Iterator<Item = (&str, &str)> {
    tokens.windows(2).map(|w| (w[0].as_str(), w[1].as_str()))
}

fn distinct_ratio<'a>(grams: impl Iterator<Item = (&'a str, &'a str)>) -> Option<f64> {
    let mut total = 0usize;
    let mut seen = HashSet::new();
    for g in grams {
        total += 1;
        seen.insert(g);
    }
    (total > 0).then(|| seen.len() as f64 / total as f64)
}

/// Ratio of distinct to total bigrams, pooled over all captions.
/// Zero when there are no bigrams at all.
pub fn div2<S: AsRef<str>>(captions: &[S], policy: &TokenizationPolicy) -> f64 {
    div2_scoped(captions, policy, Div2Scope::Pooled)
}

pub fn div2_scoped<S: AsRef<str>>(
    captions: &[S],
    policy: &TokenizationPolicy,
    scope: Div2Scope,
) -> f64 {
    let tokenized: Vec<Vec<String>> = captions
        .iter()
        .map(|c| policy.tokenize(c.as_ref()))
        .collect();
    match scope {
        Div2Scope::Pooled => {
            distinct_ratio(tokenized.iter().flat_map(|t| bigrams(t))).unwrap_or(0.0)
        }
        Div2Scope::PerCaption => {
            let ratios: Vec<f64> = tokenized
                .iter()
                .filter_map(|t| distinct_ratio(bigrams(t)))
                .collect();
            if ratios.is_empty() {
                0.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            }
        }
    }
}

/// Incremental mean; exact whenever all inputs are equal.
fn running_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (k, x) in values.into_iter().enumerate() {
        mean += (x - mean) / (k + 1) as f64;
    }
    mean
}

/// Mean taken in sorted order, so the result depends only on the multiset
/// of values and not on the order captions were listed in.
fn finite_mean(values: &[f64]) -> Result<f64, MetricError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(running_mean(sorted))
}

/// Mean of `scorer(reference = ground_truth, candidate = caption)`.
pub fn mean_groundtruth_similarity<S: AsRef<str>>(
    scorer: &dyn TextScorer,
    ground_truth: &str,
    captions: &[S],
) -> Result<f64, MetricError> {
    if captions.is_empty() {
        return Err(MetricError::TooFewCaptions(0));
    }
    let pairs: Vec<(&str, &str)> = captions
        .iter()
        .map(|c| (ground_truth, c.as_ref()))
        .collect();
    finite_mean(&scorer.text_similarity_batch(&pairs)?)
}

/// Mean similarity over all ordered pairs `(i, j)`, `i != j`.
///
/// Ordered pairs are used because learned text scorers are asymmetric; with
/// a symmetric scorer this equals the unordered-pair mean.
pub fn self_similarity<S: AsRef<str>>(
    scorer: &dyn TextScorer,
    captions: &[S],
) -> Result<f64, MetricError> {
    if captions.len() < 2 {
        return Err(MetricError::TooFewCaptions(captions.len()));
    }
    let mut pairs = Vec::with_capacity(captions.len() * (captions.len() - 1));
    for (i, reference) in captions.iter().enumerate() {
        for (j, candidate) in captions.iter().enumerate() {
            if i != j {
                pairs.push((reference.as_ref(), candidate.as_ref()));
            }
        }
    }
    finite_mean(&scorer.text_similarity_batch(&pairs)?)
}

pub fn mean_image_similarity<S: AsRef<str>>(
    scorer: &dyn ImageTextScorer,
    image: &ImagePayload,
    captions: &[S],
) -> Result<f64, MetricError> {
    if captions.is_empty() {
        return Err(MetricError::TooFewCaptions(0));
    }
    let candidates: Vec<&str> = captions.iter().map(AsRef::as_ref).collect();
    finite_mean(&scorer.image_text_similarity_batch(image, &candidates)?)
}

/// The four metric values of one sample in one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub bleurt: f64,
    pub clipscore: f64,
    pub self_sim: f64,
    pub div2: f64,
}

/// Per-setting means, one row of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub bleurt_mean: f64,
    pub clipscore_mean: f64,
    pub self_sim_mean: f64,
    pub div2_mean: f64,
    pub n_samples: usize,
}

impl SettingReport {
    /// Count-weighted combination of two disjoint aggregates.
    pub fn merge(&self, other: &SettingReport) -> SettingReport {
        let n = self.n_samples + other.n_samples;
        let (a, b) = (self.n_samples as f64, other.n_samples as f64);
        let mix = |x: f64, y: f64| (x * a + y * b) / n as f64;
        SettingReport {
            bleurt_mean: mix(self.bleurt_mean, other.bleurt_mean),
            clipscore_mean: mix(self.clipscore_mean, other.clipscore_mean),
            self_sim_mean: mix(self.self_sim_mean, other.self_sim_mean),
            div2_mean: mix(self.div2_mean, other.div2_mean),
            n_samples: n,
        }
    }
}

/// Unweighted mean of each metric over samples.
pub fn aggregate(per_sample: &[SampleMetrics]) -> Result<SettingReport, MetricError> {
    if per_sample.is_empty() {
        return Err(MetricError::EmptySetting);
    }
    let mean = |f: fn(&SampleMetrics) -> f64| running_mean(per_sample.iter().map(f));
    let report = SettingReport {
        bleurt_mean: mean(|m| m.bleurt),
        clipscore_mean: mean(|m| m.clipscore),
        self_sim_mean: mean(|m| m.self_sim),
        div2_mean: mean(|m| m.div2),
        n_samples: per_sample.len(),
    };
    let all = [
        report.bleurt_mean,
        report.clipscore_mean,
        report.self_sim_mean,
        report.div2_mean,
    ];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(report)
}
