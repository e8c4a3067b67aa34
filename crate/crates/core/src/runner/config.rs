//! Run configuration, read from a single TOML file.
//!
//! ```toml
//! data_root = "data"            # holds <dataset>.jsonl manifests
//! datasets = ["tweet-subtitles", "anna"]
//! samples = 1500                # optional seeded subset per dataset
//! seed = 42
//! workers = 4
//! out_dir = "runs"
//! consistency_scope = "dataset" # or "run"
//! transcript = false
//!
//! [scorer]
//! kind = "process"              # "fallback" | "process" | "http"
//! command = ["python", "-m", "scorer_service"]
//!
//! [metrics]
//! div2_scope = "pooled"         # or "per-caption"
//!
//! [[models]]
//! provider_id = "openai-compatible"
//! label = "GPT-4o"
//! model_id = "gpt-4o-2024-11-20"
//! api_key_env = "OPENAI_API_KEY"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.
//! API keys are never written in the file; models name the environment
//! variable that holds them.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::datasets::{ConsistencyScope, DatasetId};
use crate::metrics::{Div2Scope, TokenizationPolicy};
use crate::providers::{ProviderConfig, ProviderKind};

fn default_seed() -> u64 {
    42
}

fn default_workers() -> usize {
    4
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_scorer_timeout() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Offline lexical scorer; no model server needed.
    #[default]
    Fallback,
    /// Child process speaking the line protocol on stdin/stdout.
    Process { command: Vec<String> },
    Http {
        url: String,
        #[serde(default = "default_scorer_timeout")]
        timeout_secs: u64,
    },
}

impl ScorerConfig {
    /// Parses a `--scorer` argument: an `http(s)://` URL or a
    /// whitespace-separated command line.
    pub fn from_arg(arg: &str) -> Result<Self, RunError> {
        let arg = arg.trim();
        if arg.starts_with("http://") || arg.starts_with("https://") {
            Ok(ScorerConfig::Http {
                url: arg.to_string(),
                timeout_secs: default_scorer_timeout(),
            })
        } else if arg == "fallback" {
            Ok(ScorerConfig::Fallback)
        } else {
            let command: Vec<String> = arg.split_whitespace().map(str::to_string).collect();
            if command.is_empty() {
                return Err(RunError::ConfigInvalid("empty scorer command".into()));
            }
            Ok(ScorerConfig::Process { command })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub tokenization: TokenizationPolicy,
    #[serde(default)]
    pub div2_scope: Div2Scope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub datasets: Vec<DatasetId>,
    pub models: Vec<ProviderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub consistency_scope: ConsistencyScope,
    /// Write provider exchanges to `transcript.jsonl` in the run directory.
    #[serde(default)]
    pub transcript: bool,
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::ConfigInvalid(msg.into())
}

/// Sets `dotted.key` in a TOML tree. Array elements are addressed by index.
fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), RunError> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("malformed override key `{key}`")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(format!("`{part}` in `{key}` is not an index")))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    invalid(format!("index {idx} out of range ({len}) in `{key}`"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(format!("`{key}` does not name a table entry"))),
        };
    }
    unreachable!("loop returns on the last part")
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(
        text: &str,
        base_dir: &Path,
        overrides: &[(String, String)],
    ) -> Result<Self, RunError> {
        let mut tree: toml::Value = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut tree, k, v)?;
        }
        let mut config: RunConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        if config.data_root.is_relative() {
            config.data_root = base_dir.join(&config.data_root);
        }
        if config.out_dir.is_relative() {
            config.out_dir = base_dir.join(&config.out_dir);
        }
        config.validate()?;
        Ok(config)
    }

    /// Switches every model to the offline mock, keeping ids and labels.
    pub fn use_mock_providers(&mut self) {
        for m in &mut self.models {
            m.provider_id = ProviderKind::Mock;
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.datasets.is_empty() {
            return Err(invalid("config names no datasets"));
        }
        if self.models.is_empty() {
            return Err(invalid("config names no models"));
        }
        let mut seen = HashSet::new();
        if !self.datasets.iter().all(|d| seen.insert(*d)) {
            return Err(invalid("a dataset is listed twice"));
        }
        let mut ids = HashSet::new();
        for m in &self.models {
            m.validate().map_err(|e| invalid(e.to_string()))?;
            if !ids.insert(m.model_id.as_str()) {
                return Err(invalid(format!("model {} is listed twice", m.model_id)));
            }
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.samples == Some(0) {
            return Err(invalid("samples must be at least 1"));
        }
        if let ScorerConfig::Process { command } = &self.scorer {
            if command.is_empty() {
                return Err(invalid("scorer command is empty"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        data_root = "data"
        datasets = ["anna"]
        [[models]]
        provider_id = "mock"
        model_id = "m1"
    "#;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_and_relative_paths() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("/cfg"), &[]).unwrap();
        assert_eq!(c.data_root, Path::new("/cfg/data"));
        assert_eq!(c.out_dir, Path::new("/cfg/runs"));
        assert_eq!((c.seed, c.workers, c.samples), (42, 4, None));
        assert_eq!(c.scorer, ScorerConfig::Fallback);
        assert_eq!(c.consistency_scope, ConsistencyScope::Dataset);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::from_toml_str(
            MINIMAL,
            Path::new("/"),
            &[
                ov("seed", "7"),
                ov("samples", "10"),
                ov("models.0.label", "Mock One"),
                ov("metrics.div2_scope", "per-caption"),
                ov("scorer.kind", "http"),
                ov("scorer.url", "http://localhost:9"),
            ],
        )
        .unwrap();
        assert_eq!((c.seed, c.samples), (7, Some(10)));
        assert_eq!(c.models[0].label(), "Mock One");
        assert_eq!(c.metrics.div2_scope, Div2Scope::PerCaption);
        assert!(matches!(c.scorer, ScorerConfig::Http { .. }));
    }

    #[test]
    fn unknown_keys_fail() {
        for bad in [
            ov("sede", "1"),
            ov("models.3.label", "x"),
            ov("seed.x", "1"),
            ov("models.0.api_key", "s"),
        ] {
            assert!(
                RunConfig::from_toml_str(MINIMAL, Path::new("/"), std::slice::from_ref(&bad))
                    .is_err(),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn invalid_configs() {
        let no_models = "data_root = \"d\"\ndatasets = [\"anna\"]\nmodels = []";
        let err = RunConfig::from_toml_str(no_models, Path::new("/"), &[]).unwrap_err();
        assert!(err.to_string().contains("no models"), "{err}");
        assert!(RunConfig::from_toml_str(MINIMAL, Path::new("/"), &[ov("workers", "0")]).is_err());
        assert!(RunConfig::from_toml_str(
            MINIMAL,
            Path::new("/"),
            &[ov("datasets", "[\"anna\", \"anna\"]")]
        )
        .is_err());
    }

    #[test]
    fn scorer_arg() {
        assert!(matches!(
            ScorerConfig::from_arg("https://h/x").unwrap(),
            ScorerConfig::Http { .. }
        ));
        assert_eq!(
            ScorerConfig::from_arg("python -m svc").unwrap(),
            ScorerConfig::Process {
                command: vec!["python".into(), "-m".into(), "svc".into()]
            }
        );
        assert!(ScorerConfig::from_arg("  ").is_err());
    }
}
