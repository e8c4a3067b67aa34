use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::cache::{CacheKey, GenerationCache};
use super::config::{RunConfig, ScorerConfig};
use super::plan::{plan, Setting};
use super::RunError;
use crate::datasets::{
    filter_rejected_scoped, load_dataset, sample_subset, ConsistencyScope, DatasetId, RejectReason,
    Rejection, RejectionLog, Sample,
};
use crate::image::ImagePayload;
use crate::metrics::{
    aggregate, div2_scoped, mean_groundtruth_similarity, mean_image_similarity, self_similarity,
    Div2Scope, MetricError, SampleMetrics, SettingReport, TokenizationPolicy,
};
use crate::prompting::{PromptBundle, Task};
use crate::providers::{
    CaptionProvider, GenerationOutcome, GenerationStatus, ProviderClient, ProviderConfig,
    ProviderError, Transcript,
};
use crate::scoring::{FallbackScorer, HttpScorer, LineScorer, Scorer};

/// How unusable generations are handled; recorded in every manifest.
pub const FAILURE_POLICY: &str =
    "retry with repair prompt up to max_retries, then reject the sample; rejected samples are removed from every setting before aggregation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    /// Valid test-split records in the manifest.
    pub loaded: usize,
    /// Samples selected for the run.
    pub selected: usize,
    /// Samples left after consistency filtering.
    pub evaluated: usize,
}

/// A provider as it was configured for the run, without secrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSnapshot {
    pub config: ProviderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub request_params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub config: ScorerConfig,
    /// Checkpoint identifier reported by the scorer.
    pub scorer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub setting: Setting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SettingReport>,
    /// Why the cell has no report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub total: usize,
    pub by_reason: BTreeMap<String, usize>,
    pub entries: RejectionLog,
}

/// Everything needed to re-render the reports of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_requested: Option<usize>,
    pub datasets: Vec<DatasetId>,
    pub dataset_checksums: BTreeMap<DatasetId, String>,
    pub sample_counts: BTreeMap<DatasetId, DatasetCounts>,
    pub providers: Vec<ProviderSnapshot>,
    pub scorer: ScorerInfo,
    pub tokenization: TokenizationPolicy,
    pub div2_scope: Div2Scope,
    pub consistency_scope: ConsistencyScope,
    pub failure_policy: String,
    pub settings: Vec<CellResult>,
    pub rejections: RejectionSummary,
}

impl RunManifest {
    /// The manifest with run identity blanked, for comparing two runs.
    pub fn without_identity(&self) -> RunManifest {
        RunManifest {
            run_id: String::new(),
            created_at: String::new(),
            ..self.clone()
        }
    }

    pub fn complete(&self) -> bool {
        !self.settings.is_empty() && self.settings.iter().all(|c| c.report.is_some())
    }
}

/// Datasets loaded and subset, with the plan to run over them.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub plan: Vec<Setting>,
    pub samples: BTreeMap<DatasetId, Vec<Sample>>,
    pub checksums: BTreeMap<DatasetId, String>,
    pub loaded: BTreeMap<DatasetId, usize>,
}

pub fn prepare(config: &RunConfig) -> Result<PreparedRun, RunError> {
    config.validate()?;
    let plan = plan(config)?;
    let mut samples = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    let mut loaded = BTreeMap::new();
    for &dataset in &config.datasets {
        let data = load_dataset(&config.data_root, dataset)?;
        let selected = match config.samples {
            Some(n) => sample_subset(&data.samples, n, config.seed)?,
            None => data.samples.clone(),
        };
        info!(
            "{dataset}: {} of {} samples selected",
            selected.len(),
            data.samples.len()
        );
        loaded.insert(dataset, data.samples.len());
        checksums.insert(dataset, data.checksum);
        samples.insert(dataset, selected);
    }
    Ok(PreparedRun {
        config: config.clone(),
        plan,
        samples,
        checksums,
        loaded,
    })
}

pub fn build_providers(
    config: &RunConfig,
    transcript: Option<Arc<Transcript>>,
) -> Result<Vec<Arc<dyn CaptionProvider>>, RunError> {
    config
        .models
        .iter()
        .map(|m| {
            let mut client = ProviderClient::from_config(m.clone())?;
            if let Some(t) = &transcript {
                client = client.with_transcript(t.clone());
            }
            Ok(Arc::new(client) as Arc<dyn CaptionProvider>)
        })
        .collect()
}

pub fn build_scorer(
    config: &ScorerConfig,
    policy: TokenizationPolicy,
) -> Result<Box<dyn Scorer>, RunError> {
    Ok(match config {
        ScorerConfig::Fallback => Box::new(FallbackScorer::new(policy)),
        ScorerConfig::Process { command } => Box::new(LineScorer::spawn(command)?),
        ScorerConfig::Http { url, timeout_secs } => Box::new(HttpScorer::connect(
            url,
            Duration::from_secs(*timeout_secs),
        )?),
    })
}

#[derive(Debug, Clone)]
pub struct RunStamp {
    pub run_id: String,
    pub created_at: String,
}

impl RunStamp {
    /// Current UTC time plus a short digest of the config, e.g.
    /// `20261016T134501Z-3fa2c1d0`.
    pub fn now(config: &RunConfig) -> Self {
        let now = chrono::Utc::now();
        let json = serde_json::to_string(config).expect("config serializes");
        let digest = crate::datasets::sha256_hex(json.as_bytes());
        Self {
            run_id: format!("{}-{}", now.format("%Y%m%dT%H%M%SZ"), &digest[..8]),
            created_at: now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    /// Provider requests issued during this execution.
    pub provider_calls: usize,
    pub cache_hits: usize,
}

fn reject_reason(status: GenerationStatus) -> Option<RejectReason> {
    match status {
        GenerationStatus::Ok => None,
        GenerationStatus::SafetyRejected => Some(RejectReason::SafetyRejected),
        GenerationStatus::TransportFailed => Some(RejectReason::TransportFailed),
        GenerationStatus::SchemaFailed => Some(RejectReason::SchemaFailed),
    }
}

fn failed_outcome(error: String) -> GenerationOutcome {
    GenerationOutcome {
        status: GenerationStatus::TransportFailed,
        raw_text: None,
        caption_set: None,
        attempts: 0,
        latency_ms: 0,
        error: Some(error),
    }
}

fn make_bundle(setting: &Setting, sample: &Sample) -> Result<PromptBundle, String> {
    let image = ImagePayload::from_file(&sample.image_path).map_err(|e| e.to_string())?;
    let caption = match setting.task {
        Task::ImageOnly => None,
        Task::ImagePlusCaption => Some(sample.ground_truth_caption.as_str()),
    };
    PromptBundle::new(
        &sample.sample_id,
        setting.strategy,
        setting.task,
        caption,
        image,
    )
    .map_err(|e| e.to_string())
}

/// Runs `job(i)` for `i in 0..n` on up to `workers` threads, handing each
/// result to `sink` on the calling thread. Stops handing out work once
/// `stop` is set.
fn run_pool<T, J, S>(n: usize, workers: usize, stop: &AtomicBool, job: J, mut sink: S)
where
    T: Send,
    J: Fn(usize) -> T + Sync,
    S: FnMut(usize, T),
{
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            let tx = tx.clone();
            let (next, job) = (&next, &job);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                if tx.send((i, job(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, result) in rx {
            sink(i, result);
        }
    });
}

fn score_sample(
    scorer: &dyn Scorer,
    policy: &TokenizationPolicy,
    div2_scope: Div2Scope,
    sample: &Sample,
    captions: &[String],
) -> Result<SampleMetrics, RunError> {
    let image = ImagePayload::from_file(&sample.image_path)
        .map_err(|e| RunError::Scoring(format!("{}: {e}", sample.image_path.display())))?;
    let wrap = |e: MetricError| RunError::Scoring(format!("sample {}: {e}", sample.sample_id));
    Ok(SampleMetrics {
        bleurt: mean_groundtruth_similarity(scorer, &sample.ground_truth_caption, captions)
            .map_err(wrap)?,
        clipscore: mean_image_similarity(scorer, &image, captions).map_err(wrap)?,
        self_sim: self_similarity(scorer, captions).map_err(wrap)?,
        div2: div2_scoped(captions, policy, div2_scope),
    })
}

/// Generates every (cell, sample) not in `cache`, then filters rejected
/// samples out of all cells and aggregates the metrics.
pub fn execute(
    run: &PreparedRun,
    providers: &[Arc<dyn CaptionProvider>],
    scorer: &dyn Scorer,
    cache: &mut GenerationCache,
    stamp: RunStamp,
) -> Result<RunResult, RunError> {
    let config = &run.config;
    if providers.len() != config.models.len() {
        return Err(RunError::ConfigInvalid(format!(
            "{} providers for {} configured models",
            providers.len(),
            config.models.len()
        )));
    }
    let calls_before: usize = providers.iter().map(|p| p.calls()).sum();
    let mut cache_hits = 0;
    let mut aborted: BTreeMap<String, String> = BTreeMap::new();
    // Outcomes the cache declines to keep (transport failures) still count
    // for this run.
    let mut transient: HashMap<CacheKey, GenerationOutcome> = HashMap::new();

    // Generation, dataset-major and sample-minor.
    for setting in &run.plan {
        let samples = &run.samples[&setting.dataset];
        let pending: Vec<&Sample> = samples
            .iter()
            .filter(|s| cache.get(&CacheKey::new(setting, &s.sample_id)).is_none())
            .collect();
        cache_hits += samples.len() - pending.len();
        if pending.is_empty() {
            continue;
        }
        info!("{setting}: generating {} sample(s)", pending.len());
        let provider = &providers[setting.model_index];
        let stop = AtomicBool::new(false);
        let mut write_error = None;
        run_pool(
            pending.len(),
            config.workers,
            &stop,
            |i| -> Result<GenerationOutcome, ProviderError> {
                match make_bundle(setting, pending[i]) {
                    Ok(bundle) => provider.generate(&bundle),
                    Err(e) => Ok(failed_outcome(e)),
                }
            },
            |i, result| match result {
                Ok(outcome) => {
                    if outcome.status != GenerationStatus::Ok {
                        warn!("{setting} {}: {:?}", pending[i].sample_id, outcome.status);
                    }
                    let key = CacheKey::new(setting, &pending[i].sample_id);
                    if outcome.status == GenerationStatus::TransportFailed {
                        transient.insert(key, outcome);
                    } else if let Err(e) = cache.insert(key, outcome) {
                        write_error.get_or_insert(e);
                        stop.store(true, Ordering::SeqCst);
                    }
                }
                Err(ProviderError::ConfigInvalid(msg)) => {
                    stop.store(true, Ordering::SeqCst);
                    aborted.entry(setting.cell_id()).or_insert(msg);
                }
            },
        );
        if let Some(e) = write_error {
            return Err(e);
        }
        if let Some(msg) = aborted.get(&setting.cell_id()) {
            warn!("{setting}: aborted: {msg}");
        }
    }
    let provider_calls = providers.iter().map(|p| p.calls()).sum::<usize>() - calls_before;
    let outcome_of = |setting: &Setting, sample: &Sample| {
        let key = CacheKey::new(setting, &sample.sample_id);
        cache.get(&key).or_else(|| transient.get(&key)).cloned()
    };

    // Every unusable generation removes its sample from all settings.
    let mut log = RejectionLog::new();
    for setting in run
        .plan
        .iter()
        .filter(|s| !aborted.contains_key(&s.cell_id()))
    {
        for sample in &run.samples[&setting.dataset] {
            let Some(outcome) = outcome_of(setting, sample) else {
                continue;
            };
            if let Some(reason) = reject_reason(outcome.status) {
                log.record(Rejection {
                    dataset: setting.dataset,
                    sample_id: sample.sample_id.clone(),
                    reason,
                    cell: Some(setting.cell_id()),
                });
            }
        }
    }
    let kept: BTreeMap<DatasetId, Vec<Sample>> = run
        .samples
        .iter()
        .map(|(d, s)| {
            (
                *d,
                filter_rejected_scoped(s, &log, config.consistency_scope),
            )
        })
        .collect();

    let policy = config.metrics.tokenization;
    let mut settings = Vec::with_capacity(run.plan.len());
    for setting in &run.plan {
        if let Some(msg) = aborted.get(&setting.cell_id()) {
            settings.push(CellResult {
                setting: setting.clone(),
                report: None,
                error: Some(msg.clone()),
            });
            continue;
        }
        let samples = &kept[&setting.dataset];
        let mut captions = Vec::with_capacity(samples.len());
        for sample in samples {
            let set = outcome_of(setting, sample)
                .and_then(|o| o.caption_set)
                .ok_or_else(|| {
                    RunError::Scoring(format!("{setting}: no captions for {}", sample.sample_id))
                })?;
            captions.push(set.captions().to_vec());
        }
        let mut per_sample: Vec<Option<Result<SampleMetrics, RunError>>> =
            (0..samples.len()).map(|_| None).collect();
        run_pool(
            samples.len(),
            config.workers,
            &AtomicBool::new(false),
            |i| {
                score_sample(
                    scorer,
                    &policy,
                    config.metrics.div2_scope,
                    &samples[i],
                    &captions[i],
                )
            },
            |i, r| per_sample[i] = Some(r),
        );
        let per_sample: Vec<SampleMetrics> = per_sample
            .into_iter()
            .map(|r| r.expect("every sample scored"))
            .collect::<Result<_, _>>()?;
        let (report, error) = match aggregate(&per_sample) {
            Ok(r) => (Some(r), None),
            Err(MetricError::EmptySetting) => {
                (None, Some("no samples left after filtering".to_string()))
            }
            Err(e) => return Err(RunError::Scoring(format!("{setting}: {e}"))),
        };
        settings.push(CellResult {
            setting: setting.clone(),
            report,
            error,
        });
    }

    let sample_counts = run
        .samples
        .iter()
        .map(|(d, s)| {
            (
                *d,
                DatasetCounts {
                    loaded: run.loaded.get(d).copied().unwrap_or(s.len()),
                    selected: s.len(),
                    evaluated: kept[d].len(),
                },
            )
        })
        .collect();
    let mut by_reason = BTreeMap::new();
    for r in log.iter() {
        *by_reason.entry(format!("{:?}", r.reason)).or_insert(0) += 1;
    }
    let manifest = RunManifest {
        run_id: stamp.run_id,
        created_at: stamp.created_at,
        seed: config.seed,
        samples_requested: config.samples,
        datasets: config.datasets.clone(),
        dataset_checksums: run.checksums.clone(),
        sample_counts,
        providers: config
            .models
            .iter()
            .map(|m| ProviderSnapshot {
                config: m.clone(),
                endpoint: m.resolved_endpoint(),
                request_params: m.effective_params(),
            })
            .collect(),
        scorer: ScorerInfo {
            config: config.scorer.clone(),
            scorer_id: scorer.scorer_id().to_string(),
        },
        tokenization: policy,
        div2_scope: config.metrics.div2_scope,
        consistency_scope: config.consistency_scope,
        failure_policy: FAILURE_POLICY.to_string(),
        settings,
        rejections: RejectionSummary {
            total: log.len(),
            by_reason,
            entries: log,
        },
    };
    Ok(RunResult {
        manifest,
        provider_calls,
        cache_hits,
    })
}
