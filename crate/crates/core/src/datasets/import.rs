//! Conversion of the public dataset layouts into canonical manifests.
//!
//! Both adapters read the test split from `<src>/test.jsonl` (one object per
//! line) or `<src>/test.json` (a JSON array). Image paths in the source are
//! relative to `<src>`.
//!
//! | dataset         | id                    | image                                 | caption                      |
//! |-----------------|-----------------------|---------------------------------------|------------------------------|
//! | tweet-subtitles | `id` / `tweet_id`     | `image` / `image_path` / `img`        | `actual` / `actual_caption`  |
//! | anna            | `id` / `image_id`     | `image` / `image_path` / `file_name`  | `caption` / `abstractive_caption` |
//!
//! Tweet Subtitles also ships machine-generated captions
//! (`generated`, `generated_caption`); those are never imported.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{sha256_hex, DatasetId, InvalidRecord, ManifestRecord};
use crate::image::MediaType;

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error("no test split found in {0} (expected test.jsonl or test.json)")]
    UnrecognizedLayout(PathBuf),
    #[error("no records imported from {0}")]
    NoRecords(PathBuf),
    #[error("malformed source file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ImportReport {
    pub written: usize,
    pub skipped: Vec<InvalidRecord>,
    pub manifest: PathBuf,
}

struct FieldNames {
    id: &'static [&'static str],
    image: &'static [&'static str],
    caption: &'static [&'static str],
}

fn field_names(dataset: DatasetId) -> FieldNames {
    match dataset {
        DatasetId::TweetSubtitles => FieldNames {
            id: &["id", "tweet_id"],
            image: &["image", "image_path", "img"],
            caption: &["actual", "actual_caption"],
        },
        DatasetId::Anna => FieldNames {
            id: &["id", "image_id"],
            image: &["image", "image_path", "file_name"],
            caption: &["caption", "abstractive_caption"],
        },
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImportError + '_ {
    move |source| ImportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_source(src: &Path) -> Result<Vec<Result<Value, String>>, ImportError> {
    let jsonl = src.join("test.jsonl");
    let json = src.join("test.json");
    if jsonl.is_file() {
        let text = std::fs::read_to_string(&jsonl).map_err(io_err(&jsonl))?;
        Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| format!("bad JSON: {e}")))
            .collect())
    } else if json.is_file() {
        let text = std::fs::read_to_string(&json).map_err(io_err(&json))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Array(items)) => Ok(items.into_iter().map(Ok).collect()),
            Ok(_) => Err(ImportError::Malformed {
                path: json,
                reason: "expected a top-level array".into(),
            }),
            Err(e) => Err(ImportError::Malformed {
                path: json,
                reason: e.to_string(),
            }),
        }
    } else {
        Err(ImportError::UnrecognizedLayout(src.to_path_buf()))
    }
}

fn pick(record: &Value, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| match record.get(*n)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

/// Absolute form of `path` with `.` and `..` resolved lexically.
fn absolute(path: &Path) -> Result<PathBuf, ImportError> {
    use std::path::Component;
    let abs = std::path::absolute(path).map_err(io_err(path))?;
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Ok(out)
}

/// Converts `src` into a canonical manifest at `out`.
///
/// Output is a pure function of the source files, so re-importing the same
/// directory yields a byte-identical manifest.
pub fn import_dataset(
    dataset: DatasetId,
    src: &Path,
    out: &Path,
) -> Result<ImportReport, ImportError> {
    let records = read_source(src)?;
    let names = field_names(dataset);
    let src_abs = absolute(src)?;
    let out_abs = absolute(out)?;
    let out_dir = out_abs.parent().unwrap_or(Path::new("/")).to_path_buf();

    let mut lines = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, record) in records.into_iter().enumerate() {
        let line = idx + 1;
        let mut skip = |reason: String| skipped.push(InvalidRecord { line, reason });
        let record = match record {
            Ok(r) => r,
            Err(reason) => {
                skip(reason);
                continue;
            }
        };
        let (Some(id), Some(image)) = (pick(&record, names.id), pick(&record, names.image)) else {
            skip("missing id or image field".into());
            continue;
        };
        let caption = pick(&record, names.caption).unwrap_or_default();
        if caption.trim().is_empty() {
            skip(format!("record {id} has no caption"));
            continue;
        }
        if !seen.insert(id.clone()) {
            skip(format!("duplicate id {id}"));
            continue;
        }
        let image_abs = absolute(&src_abs.join(&image))?;
        let bytes = match std::fs::read(&image_abs) {
            Ok(b) => b,
            Err(e) => {
                skip(format!("image {}: {e}", image_abs.display()));
                continue;
            }
        };
        if let Err(e) = MediaType::sniff(&bytes) {
            skip(format!("image {}: {e}", image_abs.display()));
            continue;
        }
        let relative = pathdiff::diff_paths(&image_abs, &out_dir).unwrap_or(image_abs);
        let manifest_record = ManifestRecord {
            id,
            image: relative.to_string_lossy().replace('\\', "/"),
            caption,
            split: "test".into(),
            checksum: Some(sha256_hex(&bytes)),
        };
        lines.push(serde_json::to_string(&manifest_record).expect("record serializes"));
    }

    if lines.is_empty() {
        return Err(ImportError::NoRecords(src.to_path_buf()));
    }
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let tmp = out_abs.with_extension("jsonl.tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        for l in &lines {
            writeln!(f, "{l}").map_err(io_err(&tmp))?;
        }
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, &out_abs).map_err(io_err(&out_abs))?;
    Ok(ImportReport {
        written: lines.len(),
        skipped,
        manifest: out_abs,
    })
}
