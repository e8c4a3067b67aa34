use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DatasetId, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    SafetyRejected,
    TransportFailed,
    SchemaFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub dataset: DatasetId,
    pub sample_id: String,
    pub reason: RejectReason,
    /// Setting in which the rejection was first observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
}

/// Samples rejected anywhere in a run; one entry per (dataset, sample).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Rejection>", into = "Vec<Rejection>")]
pub struct RejectionLog {
    entries: BTreeMap<(DatasetId, String), Rejection>,
}

impl RejectionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a rejection; the first reason seen for a sample is kept.
    /// Returns `false` if the sample was already present.
    pub fn record(&mut self, rejection: Rejection) -> bool {
        let key = (rejection.dataset, rejection.sample_id.clone());
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, rejection);
        true
    }

    pub fn contains(&self, dataset: DatasetId, sample_id: &str) -> bool {
        self.entries.contains_key(&(dataset, sample_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rejection> {
        self.entries.values()
    }

    pub fn count_by_reason(&self, reason: RejectReason) -> usize {
        self.iter().filter(|r| r.reason == reason).count()
    }
}

impl From<Vec<Rejection>> for RejectionLog {
    fn from(v: Vec<Rejection>) -> Self {
        let mut log = RejectionLog::new();
        for r in v {
            log.record(r);
        }
        log
    }
}

impl From<RejectionLog> for Vec<Rejection> {
    fn from(log: RejectionLog) -> Self {
        log.entries.into_values().collect()
    }
}

/// Which samples a rejection removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyScope {
    /// The rejected sample leaves every setting of its own dataset.
    #[default]
    Dataset,
    /// The rejected sample id leaves every setting of every dataset. For
    /// runs where several dataset labels share one sample pool.
    Run,
}

/// Drops every sample rejected in any setting of the run, so all settings
/// aggregate over the same samples.
pub fn filter_rejected(samples: &[Sample], log: &RejectionLog) -> Vec<Sample> {
    filter_rejected_scoped(samples, log, ConsistencyScope::Dataset)
}

pub fn filter_rejected_scoped(
    samples: &[Sample],
    log: &RejectionLog,
    scope: ConsistencyScope,
) -> Vec<Sample> {
    let ids: BTreeSet<&str> = log.iter().map(|r| r.sample_id.as_str()).collect();
    samples
        .iter()
        .filter(|s| match scope {
            ConsistencyScope::Dataset => !log.contains(s.dataset, &s.sample_id),
            ConsistencyScope::Run => !ids.contains(s.sample_id.as_str()),
        })
        .cloned()
        .collect()
}
