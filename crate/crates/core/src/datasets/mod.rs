//! Evaluation samples: canonical manifests, subsetting and rejection filtering.
//!
//! A dataset lives in a directory holding `<slug>.jsonl`, one record per
//! line: `{"id", "image", "caption", "split", "checksum"?}`. Image paths are
//! relative to that directory; `checksum` is a lowercase SHA-256 hex digest
//! of the image bytes and is verified when present.

mod import;
mod rejections;
mod sampling;

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image::MediaType;

pub use import::{import_dataset, ImportError, ImportReport};
pub use rejections::{
    filter_rejected, filter_rejected_scoped, ConsistencyScope, RejectReason, Rejection,
    RejectionLog,
};
pub use sampling::{sample_subset, subset_indices, SubsetTooLarge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "tweet-subtitles")]
    TweetSubtitles,
    #[serde(rename = "anna")]
    Anna,
}

impl DatasetId {
    pub fn slug(self) -> &'static str {
        match self {
            DatasetId::TweetSubtitles => "tweet-subtitles",
            DatasetId::Anna => "anna",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DatasetId::TweetSubtitles => "Tweet Subtitles",
            DatasetId::Anna => "ANNA",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for DatasetId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tweet-subtitles" => Ok(DatasetId::TweetSubtitles),
            "anna" => Ok(DatasetId::Anna),
            other => Err(format!(
                "unknown dataset `{other}` (expected tweet-subtitles or anna)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
}

/// One evaluation unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub dataset: DatasetId,
    pub sample_id: String,
    pub image_path: PathBuf,
    pub ground_truth_caption: String,
    pub split: Split,
}

/// A line of the canonical manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image: String,
    pub caption: String,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("manifest not found: {0}")]
    ManifestMissing(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A record that was dropped while loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub invalid: Vec<InvalidRecord>,
    /// SHA-256 of the manifest bytes.
    pub checksum: String,
}

pub fn manifest_path(root: &Path, dataset: DatasetId) -> PathBuf {
    root.join(format!("{}.jsonl", dataset.slug()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn check_image(path: &Path, checksum: Option<&str>) -> Result<(), String> {
    match checksum {
        Some(expected) => {
            let bytes =
                std::fs::read(path).map_err(|e| format!("image {}: {e}", path.display()))?;
            MediaType::sniff(&bytes).map_err(|e| format!("image {}: {e}", path.display()))?;
            let actual = sha256_hex(&bytes);
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(format!("checksum mismatch for {}", path.display()));
            }
        }
        None => {
            let mut head = [0u8; 32];
            let n = std::fs::File::open(path)
                .and_then(|mut f| f.read(&mut head))
                .map_err(|e| format!("image {}: {e}", path.display()))?;
            MediaType::sniff(&head[..n]).map_err(|e| format!("image {}: {e}", path.display()))?;
        }
    }
    Ok(())
}

/// Loads the test split of `dataset` from `root`, in manifest order.
///
/// Records without a caption or a readable image, with a bad checksum, or
/// with a repeated id are skipped and reported in
/// [`LoadedDataset::invalid`].
pub fn load_dataset(root: &Path, dataset: DatasetId) -> Result<LoadedDataset, DatasetError> {
    let path = manifest_path(root, dataset);
    if !path.is_file() {
        return Err(DatasetError::ManifestMissing(path));
    }
    let bytes = std::fs::read(&path).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);

    let mut samples = Vec::new();
    let mut invalid = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                invalid.push(InvalidRecord {
                    line: line_no,
                    reason: format!("bad JSON: {e}"),
                });
                continue;
            }
        };
        if record.split != "test" {
            continue;
        }
        let image_path = root.join(&record.image);
        let problem = if record.id.trim().is_empty() {
            Some("empty id".to_string())
        } else if record.caption.trim().is_empty() {
            Some(format!("record {} has an empty caption", record.id))
        } else if seen.contains(&record.id) {
            Some(format!("duplicate id {}", record.id))
        } else {
            check_image(&image_path, record.checksum.as_deref()).err()
        };
        if let Some(reason) = problem {
            invalid.push(InvalidRecord {
                line: line_no,
                reason,
            });
            continue;
        }
        seen.insert(record.id.clone());
        samples.push(Sample {
            dataset,
            sample_id: record.id,
            image_path,
            ground_truth_caption: record.caption,
            split: Split::Test,
        });
    }
    if !invalid.is_empty() {
        warn!(
            "{}: skipped {} invalid record(s) in {}",
            dataset,
            invalid.len(),
            path.display()
        );
    }
    Ok(LoadedDataset {
        samples,
        invalid,
        checksum: sha256_hex(&bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::solid_png;
    use std::io::Write;

    fn write_manifest(root: &Path, dataset: DatasetId, lines: &[String]) {
        let mut f = std::fs::File::create(manifest_path(root, dataset)).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
    }

    fn record(id: &str, image: &str, caption: &str, split: &str) -> String {
        serde_json::json!({"id": id, "image": image, "caption": caption, "split": split})
            .to_string()
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path(), DatasetId::Anna),
            Err(DatasetError::ManifestMissing(_))
        ));
    }

    #[test]
    fn skips_invalid_records() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), solid_png(2, 2, [1, 1, 1])).unwrap();
        std::fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        let good_sum = sha256_hex(&std::fs::read(dir.path().join("a.png")).unwrap());
        let lines = vec![
            record("1", "a.png", "a caption", "test"),
            record("2", "a.png", "", "test"),
            record("3", "missing.png", "x", "test"),
            record("4", "a.png", "train only", "train"),
            record("1", "a.png", "dup", "test"),
            "{not json".to_string(),
            record("5", "bad.png", "x", "test"),
            serde_json::json!({"id": "6", "image": "a.png", "caption": "c", "split": "test", "checksum": good_sum}).to_string(),
            serde_json::json!({"id": "7", "image": "a.png", "caption": "c", "split": "test", "checksum": "00"}).to_string(),
        ];
        write_manifest(dir.path(), DatasetId::TweetSubtitles, &lines);
        let loaded = load_dataset(dir.path(), DatasetId::TweetSubtitles).unwrap();
        let ids: Vec<_> = loaded
            .samples
            .iter()
            .map(|s| s.sample_id.as_str())
            .collect();
        assert_eq!(ids, ["1", "6"]);
        let bad_lines: Vec<_> = loaded.invalid.iter().map(|r| r.line).collect();
        assert_eq!(bad_lines, [2, 3, 5, 6, 7, 9]);
    }

    #[test]
    fn deterministic_given_bytes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), solid_png(2, 2, [1, 1, 1])).unwrap();
        let lines: Vec<_> = (0..20)
            .map(|i| record(&i.to_string(), "a.png", "c", "test"))
            .collect();
        write_manifest(dir.path(), DatasetId::Anna, &lines);
        let a = load_dataset(dir.path(), DatasetId::Anna).unwrap();
        let b = load_dataset(dir.path(), DatasetId::Anna).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.checksum, b.checksum);
    }

    #[test]
    fn dataset_ids_round_trip() {
        for d in [DatasetId::TweetSubtitles, DatasetId::Anna] {
            assert_eq!(d.slug().parse::<DatasetId>().unwrap(), d);
            assert_eq!(
                serde_json::to_string(&d).unwrap(),
                format!("\"{}\"", d.slug())
            );
        }
        assert!("coco".parse::<DatasetId>().is_err());
    }
}
