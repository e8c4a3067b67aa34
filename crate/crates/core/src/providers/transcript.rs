use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde_json::json;

use crate::prompting::PromptBundle;

/// Append-only JSONL log of provider exchanges.
///
/// Texts are redacted by the transport before they reach this type, and
/// image bytes are never written.
pub struct Transcript {
    out: Mutex<BufWriter<File>>,
}

impl Transcript {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub(crate) fn append(
        &self,
        model_id: &str,
        bundle: &PromptBundle,
        attempt: u32,
        event: &str,
        text: &str,
    ) {
        let line = json!({
            "ts": chrono::Utc::now().to_rfc3339(),
            "model_id": model_id,
            "sample_id": bundle.sample_id,
            "strategy": bundle.strategy,
            "task": bundle.task,
            "attempt": attempt,
            "event": event,
            "image": {"media_type": bundle.image.media_type().mime(), "bytes": bundle.image.bytes().len()},
            "text": text,
        });
        let mut out = self.out.lock().unwrap();
        let written = writeln!(out, "{line}").and_then(|_| out.flush());
        if let Err(e) = written {
            log::warn!("transcript write failed: {e}");
        }
    }
}
