use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{RunError, Setting};
use crate::datasets::DatasetId;
use crate::prompting::{Strategy, Task};
use crate::providers::{GenerationOutcome, GenerationStatus};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub dataset: DatasetId,
    pub sample_id: String,
    pub task: Task,
    pub model_id: String,
    pub strategy: Strategy,
}

impl CacheKey {
    pub fn new(setting: &Setting, sample_id: &str) -> Self {
        Self {
            dataset: setting.dataset,
            sample_id: sample_id.to_string(),
            task: setting.task,
            model_id: setting.model_id.clone(),
            strategy: setting.strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub outcome: GenerationOutcome,
}

/// Append-only JSONL store of generation outcomes.
///
/// Later records for a key replace earlier ones on load. Transport
/// failures are not stored, so a resumed run retries them.
pub struct GenerationCache {
    path: Option<PathBuf>,
    entries: HashMap<CacheKey, GenerationOutcome>,
    writer: Option<BufWriter<File>>,
}

impl GenerationCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: HashMap::new(),
            writer: None,
        }
    }

    /// Opens `path` for appending. With `read_existing`, prior records are
    /// loaded; a torn final line from an interrupted run is skipped.
    pub fn open(path: &Path, read_existing: bool) -> Result<Self, RunError> {
        let io = |source| RunError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut entries = HashMap::new();
        if read_existing && path.is_file() {
            let text = std::fs::read_to_string(path).map_err(io)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(r) => {
                        entries.insert(r.key, r.outcome);
                    }
                    Err(e) => warn!(
                        "{}:{}: skipping unreadable cache record: {e}",
                        path.display(),
                        i + 1
                    ),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        // Terminate a torn last line so the next record starts cleanly.
        let len = file.metadata().map_err(io)?.len();
        if len > 0 {
            let bytes = std::fs::read(path).map_err(io)?;
            if bytes.last() != Some(&b'\n') {
                file.write_all(b"\n").map_err(io)?;
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
            writer: Some(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<&GenerationOutcome> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores an outcome, appending it to disk. Transport failures are
    /// kept out of the cache.
    pub fn insert(&mut self, key: CacheKey, outcome: GenerationOutcome) -> Result<(), RunError> {
        if outcome.status == GenerationStatus::TransportFailed {
            return Ok(());
        }
        if let Some(w) = &mut self.writer {
            let record = CacheRecord { key, outcome };
            let line = serde_json::to_string(&record).expect("cache records serialize");
            let path = self.path.clone().unwrap_or_default();
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| RunError::Io { path, source })?;
            self.entries.insert(record.key, record.outcome);
        } else {
            self.entries.insert(key, outcome);
        }
        Ok(())
    }
}
