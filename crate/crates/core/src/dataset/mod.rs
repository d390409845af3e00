//! Annotation dataset lifecycle.
//!
//! Groups of one LR reference and four HR candidates are ingested, handed
//! out to qualified annotators in a seeded per-annotator display order,
//! collected until three rankings exist, then finalized by average-rank
//! aggregation or rejected. Every accepted write is an [`Event`]; state is
//! only ever changed by [`ServiceState::apply`], which is also what replays
//! the log on restart.

pub mod api;
pub mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl;
use crate::ranking::{
    aggregate_ranks, agreement, annotator_agreement, canonicalize_tied_ranks, win_rate_matrix, RankVector,
    RankingError, SourcedRanking, WinRateMatrix,
};
use store::EventStore;

/// Candidates per group.
pub const GROUP_SIZE: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

fn invalid(msg: impl Into<String>) -> DatasetError {
    DatasetError::InvalidInput(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRef {
    pub id: String,
    pub path: String,
    /// Tag of the model that produced the candidate.
    pub source: String,
}

/// Group description accepted by ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub group_id: String,
    pub lr_path: String,
    pub candidates: Vec<CandidateRef>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: String,
    /// Ranks in canonical candidate order.
    pub ranks: RankVector,
}

/// One exported line of the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub group_id: String,
    pub lr_path: String,
    pub candidates: Vec<CandidateRef>,
    pub annotations: Vec<Annotation>,
    pub aggregate_ranks: RankVector,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStatus {
    Open,
    Complete,
    Finalized,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Indistinguishable,
    LowContent,
    Disagreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorStatus {
    Pending,
    Qualified,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub qualification_score: f64,
    pub status: AnnotatorStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub record: GroupRecord,
    pub status: GroupStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_ranks: Option<RankVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_agreement: Option<f64>,
    /// Display order issued to each annotator: slot `p` shows candidate
    /// `order[p]`.
    #[serde(default)]
    pub issued: BTreeMap<String, Vec<usize>>,
}

impl GroupState {
    pub fn summary(&self) -> GroupSummary {
        GroupSummary {
            group_id: self.record.group_id.clone(),
            status: self.status,
            rejection_reason: self.rejection_reason,
            annotations: self.annotations.len(),
            aggregate_ranks: self.aggregate_ranks.clone(),
            annotator_agreement: self.annotator_agreement,
        }
    }

    fn has_annotation_from(&self, annotator: &str) -> bool {
        self.annotations.iter().any(|a| a.annotator_id == annotator)
    }

    fn to_dataset_record(&self) -> Option<DatasetRecord> {
        (self.status == GroupStatus::Finalized).then(|| DatasetRecord {
            group_id: self.record.group_id.clone(),
            lr_path: self.record.lr_path.clone(),
            candidates: self.record.candidates.clone(),
            annotations: self.annotations.clone(),
            aggregate_ranks: self.aggregate_ranks.clone().expect("finalized groups store aggregates"),
            metadata: self.record.metadata.clone(),
        })
    }
}

/// Public view of a group without the per-annotator display orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: String,
    pub status: GroupStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    pub annotations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_ranks: Option<RankVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCandidate {
    /// Display position, 0-based.
    pub slot: usize,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub group_id: String,
    pub annotator_id: String,
    pub lr_url: String,
    /// Candidates in display order; submitted ranks follow this order.
    pub candidates: Vec<TaskCandidate>,
}

/// State transitions, in log order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    GroupIngested {
        record: GroupRecord,
    },
    RecordImported {
        record: DatasetRecord,
        annotator_agreement: f64,
    },
    AnnotatorQualified {
        profile: AnnotatorProfile,
    },
    TaskIssued {
        group_id: String,
        annotator_id: String,
        display_order: Vec<usize>,
    },
    RankingSubmitted {
        group_id: String,
        annotator_id: String,
        ranks: RankVector,
    },
    GroupFinalized {
        group_id: String,
        annotator_agreement: f64,
        aggregate_ranks: RankVector,
    },
    GroupRejected {
        group_id: String,
        reason: RejectionReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        annotator_agreement: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub groups: BTreeMap<String, GroupState>,
    pub annotators: BTreeMap<String, AnnotatorProfile>,
}

impl ServiceState {
    /// Applies a validated event. Events are checked before they are logged,
    /// so replay never fails.
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::GroupIngested { record } => {
                self.groups.insert(
                    record.group_id.clone(),
                    GroupState {
                        record: record.clone(),
                        status: GroupStatus::Open,
                        rejection_reason: None,
                        annotations: Vec::new(),
                        aggregate_ranks: None,
                        annotator_agreement: None,
                        issued: BTreeMap::new(),
                    },
                );
            }
            Event::RecordImported {
                record,
                annotator_agreement,
            } => {
                self.groups.insert(
                    record.group_id.clone(),
                    GroupState {
                        record: GroupRecord {
                            group_id: record.group_id.clone(),
                            lr_path: record.lr_path.clone(),
                            candidates: record.candidates.clone(),
                            metadata: record.metadata.clone(),
                        },
                        status: GroupStatus::Finalized,
                        rejection_reason: None,
                        annotations: record.annotations.clone(),
                        aggregate_ranks: Some(record.aggregate_ranks.clone()),
                        annotator_agreement: Some(*annotator_agreement),
                        issued: BTreeMap::new(),
                    },
                );
            }
            Event::AnnotatorQualified { profile } => {
                self.annotators.insert(profile.annotator_id.clone(), profile.clone());
            }
            Event::TaskIssued {
                group_id,
                annotator_id,
                display_order,
            } => {
                if let Some(g) = self.groups.get_mut(group_id) {
                    g.issued.insert(annotator_id.clone(), display_order.clone());
                }
            }
            Event::RankingSubmitted {
                group_id,
                annotator_id,
                ranks,
            } => {
                if let Some(g) = self.groups.get_mut(group_id) {
                    g.annotations.push(Annotation {
                        annotator_id: annotator_id.clone(),
                        ranks: ranks.clone(),
                    });
                    if g.status == GroupStatus::Open && g.annotations.len() >= REQUIRED_ANNOTATIONS {
                        g.status = GroupStatus::Complete;
                    }
                }
            }
            Event::GroupFinalized {
                group_id,
                annotator_agreement,
                aggregate_ranks,
            } => {
                if let Some(g) = self.groups.get_mut(group_id) {
                    g.status = GroupStatus::Finalized;
                    g.annotator_agreement = Some(*annotator_agreement);
                    g.aggregate_ranks = Some(aggregate_ranks.clone());
                }
            }
            Event::GroupRejected {
                group_id,
                reason,
                annotator_agreement,
            } => {
                if let Some(g) = self.groups.get_mut(group_id) {
                    g.status = GroupStatus::Rejected;
                    g.rejection_reason = Some(*reason);
                    if annotator_agreement.is_some() {
                        g.annotator_agreement = *annotator_agreement;
                    }
                }
            }
        }
    }
}

/// Annotations needed before a group can be finalized.
pub const REQUIRED_ANNOTATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Directory relative image paths are resolved against.
    pub corpus_root: Option<PathBuf>,
    /// Seed for display-order shuffles.
    pub seed: u64,
    /// Minimum agreement with expert gold rankings (inclusive).
    pub qualification_threshold: f64,
    /// Minimum gold-set size for qualification.
    pub min_gold: usize,
    /// Groups whose inter-annotator agreement falls below this are rejected.
    pub disagreement_threshold: f64,
    /// Events between snapshots.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            corpus_root: None,
            seed: 0,
            qualification_threshold: 0.75,
            min_gold: 20,
            disagreement_threshold: 0.5,
            snapshot_every: 200,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("qualification_threshold", self.qualification_threshold),
            ("disagreement_threshold", self.disagreement_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.min_gold == 0 {
            return Err(invalid("min_gold must be at least 1"));
        }
        Ok(())
    }
}

/// One gold item for qualification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub group_id: String,
    pub ranks: RankVector,
}

struct Inner {
    state: ServiceState,
    store: Option<EventStore>,
}

/// Thread-safe dataset service. Reads share a lock; writes are applied one
/// at a time in arrival order, which also serializes writes per group.
pub struct DatasetService {
    config: ServiceConfig,
    inner: RwLock<Inner>,
    export_lock: Mutex<()>,
}

impl DatasetService {
    pub fn in_memory(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        Ok(DatasetService {
            config,
            inner: RwLock::new(Inner {
                state: ServiceState::default(),
                store: None,
            }),
            export_lock: Mutex::new(()),
        })
    }

    /// Opens a persistent service, recovering any prior state in `data_dir`.
    pub fn open(data_dir: &Path, config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let (store, state) = EventStore::open(data_dir, config.snapshot_every)?;
        Ok(DatasetService {
            config,
            inner: RwLock::new(Inner {
                state,
                store: Some(store),
            }),
            export_lock: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|p| p.into_inner())
    }

    fn commit(inner: &mut Inner, event: Event) -> Result<()> {
        if let Some(store) = inner.store.as_mut() {
            store.append(&event)?;
        }
        inner.state.apply(&event);
        if let Some(store) = inner.store.as_mut() {
            store.maybe_snapshot(&inner.state)?;
        }
        Ok(())
    }

    /// Copy of the full state, for inspection and tests.
    pub fn state(&self) -> ServiceState {
        self.read().state.clone()
    }

    pub fn group(&self, group_id: &str) -> Result<GroupSummary> {
        self.read()
            .state
            .groups
            .get(group_id)
            .map(GroupState::summary)
            .ok_or_else(|| DatasetError::NotFound(format!("group {group_id}")))
    }

    pub fn annotator(&self, annotator_id: &str) -> Option<AnnotatorProfile> {
        self.read().state.annotators.get(annotator_id).cloned()
    }

    pub fn resolve_path(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.config.corpus_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn check_image(&self, path: &str) -> Result<()> {
        let full = self.resolve_path(path);
        if !full.is_file() {
            return Err(invalid(format!("image {} does not exist", full.display())));
        }
        image::open(&full).map_err(|e| invalid(format!("image {} does not decode: {e}", full.display())))?;
        Ok(())
    }

    fn check_record_shape(&self, group_id: &str, lr_path: &str, candidates: &[CandidateRef]) -> Result<()> {
        if group_id.trim().is_empty() {
            return Err(invalid("group_id must not be empty"));
        }
        if candidates.len() != GROUP_SIZE {
            return Err(invalid(format!(
                "group {group_id} has {} candidates, expected {GROUP_SIZE}",
                candidates.len()
            )));
        }
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].iter().any(|o| o.id == c.id) {
                return Err(invalid(format!("duplicate candidate id {} in group {group_id}", c.id)));
            }
        }
        self.check_image(lr_path)?;
        for c in candidates {
            self.check_image(&c.path)?;
        }
        Ok(())
    }

    pub fn ingest_group(&self, record: GroupRecord) -> Result<String> {
        self.check_record_shape(&record.group_id, &record.lr_path, &record.candidates)?;
        let mut inner = self.write();
        if inner.state.groups.contains_key(&record.group_id) {
            return Err(DatasetError::Conflict(format!("group {} already exists", record.group_id)));
        }
        let id = record.group_id.clone();
        Self::commit(&mut inner, Event::GroupIngested { record })?;
        Ok(id)
    }

    /// Re-ingests an exported record as a finalized group.
    pub fn import_record(&self, record: DatasetRecord) -> Result<String> {
        self.check_record_shape(&record.group_id, &record.lr_path, &record.candidates)?;
        if record.annotations.len() < REQUIRED_ANNOTATIONS {
            return Err(invalid(format!(
                "group {} has {} annotations, at least {REQUIRED_ANNOTATIONS} are required",
                record.group_id,
                record.annotations.len()
            )));
        }
        let ranks: Vec<RankVector> = record.annotations.iter().map(|a| a.ranks.clone()).collect();
        if ranks.iter().any(|r| r.len() != GROUP_SIZE) || record.aggregate_ranks.len() != GROUP_SIZE {
            return Err(invalid(format!("group {} has rank vectors of the wrong length", record.group_id)));
        }
        if aggregate_ranks(&ranks)? != record.aggregate_ranks {
            return Err(invalid(format!(
                "group {} aggregate ranks do not match its annotations",
                record.group_id
            )));
        }
        let agreement_value = annotator_agreement(&ranks)?;
        let mut inner = self.write();
        if inner.state.groups.contains_key(&record.group_id) {
            return Err(DatasetError::Conflict(format!("group {} already exists", record.group_id)));
        }
        let id = record.group_id.clone();
        Self::commit(
            &mut inner,
            Event::RecordImported {
                record,
                annotator_agreement: agreement_value,
            },
        )?;
        Ok(id)
    }

    /// Scores an annotator against expert gold rankings.
    pub fn qualify_annotator(
        &self,
        annotator_id: &str,
        gold: &[GoldItem],
        submitted: &[RankVector],
    ) -> Result<AnnotatorProfile> {
        if annotator_id.trim().is_empty() {
            return Err(invalid("annotator_id must not be empty"));
        }
        if gold.len() < self.config.min_gold {
            return Err(invalid(format!(
                "gold set has {} items, at least {} are required",
                gold.len(),
                self.config.min_gold
            )));
        }
        if submitted.len() != gold.len() {
            return Err(RankingError::Alignment(format!(
                "{} submissions for {} gold items",
                submitted.len(),
                gold.len()
            ))
            .into());
        }
        let expert: Vec<RankVector> = gold.iter().map(|g| g.ranks.clone()).collect();
        let score = agreement(submitted, &expert)?;
        let profile = AnnotatorProfile {
            annotator_id: annotator_id.to_string(),
            qualification_score: score,
            status: if score >= self.config.qualification_threshold {
                AnnotatorStatus::Qualified
            } else {
                AnnotatorStatus::Rejected
            },
        };
        let mut inner = self.write();
        Self::commit(
            &mut inner,
            Event::AnnotatorQualified {
                profile: profile.clone(),
            },
        )?;
        Ok(profile)
    }

    /// Display order for `(annotator, group)`, reproducible from the seed.
    pub fn display_order(&self, annotator_id: &str, group_id: &str) -> Vec<usize> {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update((annotator_id.len() as u64).to_le_bytes());
        h.update(annotator_id.as_bytes());
        h.update(group_id.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let mut order: Vec<usize> = (0..GROUP_SIZE).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Issues the next open group this annotator has not seen, or `None`.
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<Task>> {
        let mut inner = self.write();
        match inner.state.annotators.get(annotator_id) {
            Some(p) if p.status == AnnotatorStatus::Qualified => {}
            _ => return Err(DatasetError::Forbidden(format!("annotator {annotator_id} is not qualified"))),
        }
        let Some(group_id) = inner
            .state
            .groups
            .values()
            .find(|g| {
                g.status == GroupStatus::Open
                    && !g.issued.contains_key(annotator_id)
                    && !g.has_annotation_from(annotator_id)
            })
            .map(|g| g.record.group_id.clone())
        else {
            return Ok(None);
        };
        let order = self.display_order(annotator_id, &group_id);
        Self::commit(
            &mut inner,
            Event::TaskIssued {
                group_id: group_id.clone(),
                annotator_id: annotator_id.to_string(),
                display_order: order.clone(),
            },
        )?;
        Ok(Some(Task {
            lr_url: format!("/groups/{group_id}/images/lr"),
            candidates: order
                .iter()
                .enumerate()
                .map(|(slot, &c)| TaskCandidate {
                    slot,
                    image_url: format!("/groups/{group_id}/images/{c}"),
                })
                .collect(),
            group_id,
            annotator_id: annotator_id.to_string(),
        }))
    }

    /// Stores a ranking given over the annotator's display order. Ties may be
    /// written as mid-ranks or as competition ranks (`1, 1, 3, 4`).
    pub fn submit_ranking(&self, annotator_id: &str, group_id: &str, display_ranks: &[f64]) -> Result<GroupSummary> {
        let ranks = canonicalize_tied_ranks(display_ranks)?;
        if ranks.len() != GROUP_SIZE {
            return Err(invalid(format!("expected {GROUP_SIZE} ranks, got {}", ranks.len())));
        }
        let mut inner = self.write();
        let group = inner
            .state
            .groups
            .get(group_id)
            .ok_or_else(|| DatasetError::NotFound(format!("group {group_id}")))?;
        let order = group
            .issued
            .get(annotator_id)
            .ok_or_else(|| DatasetError::NotFound(format!("no task for {annotator_id} on group {group_id}")))?;
        if group.has_annotation_from(annotator_id) {
            return Err(DatasetError::Conflict(format!(
                "{annotator_id} already ranked group {group_id}"
            )));
        }
        if matches!(group.status, GroupStatus::Finalized | GroupStatus::Rejected) {
            return Err(DatasetError::Conflict(format!("group {group_id} is closed")));
        }
        let canonical = ranks.permuted(&inverse_permutation(order))?;
        Self::commit(
            &mut inner,
            Event::RankingSubmitted {
                group_id: group_id.to_string(),
                annotator_id: annotator_id.to_string(),
                ranks: canonical,
            },
        )?;
        Ok(inner.state.groups[group_id].summary())
    }

    pub fn finalize_group(&self, group_id: &str) -> Result<GroupSummary> {
        let mut inner = self.write();
        let group = inner
            .state
            .groups
            .get(group_id)
            .ok_or_else(|| DatasetError::NotFound(format!("group {group_id}")))?;
        if group.status != GroupStatus::Complete || group.annotations.len() < REQUIRED_ANNOTATIONS {
            return Err(DatasetError::Conflict(format!(
                "group {group_id} is {:?}, not complete",
                group.status
            )));
        }
        let ranks: Vec<RankVector> = group.annotations.iter().map(|a| a.ranks.clone()).collect();
        let agreement_value = annotator_agreement(&ranks)?;
        let event = if agreement_value < self.config.disagreement_threshold {
            Event::GroupRejected {
                group_id: group_id.to_string(),
                reason: RejectionReason::Disagreement,
                annotator_agreement: Some(agreement_value),
            }
        } else {
            Event::GroupFinalized {
                group_id: group_id.to_string(),
                annotator_agreement: agreement_value,
                aggregate_ranks: aggregate_ranks(&ranks)?,
            }
        };
        Self::commit(&mut inner, event)?;
        Ok(inner.state.groups[group_id].summary())
    }

    /// Expert rejection of a group as indistinguishable or low-content.
    pub fn reject_group(&self, group_id: &str, reason: RejectionReason) -> Result<GroupSummary> {
        if reason == RejectionReason::Disagreement {
            return Err(invalid("disagreement rejections are decided at finalization"));
        }
        let mut inner = self.write();
        let group = inner
            .state
            .groups
            .get(group_id)
            .ok_or_else(|| DatasetError::NotFound(format!("group {group_id}")))?;
        if group.status == GroupStatus::Rejected {
            return Err(DatasetError::Conflict(format!("group {group_id} is already rejected")));
        }
        Self::commit(
            &mut inner,
            Event::GroupRejected {
                group_id: group_id.to_string(),
                reason,
                annotator_agreement: None,
            },
        )?;
        Ok(inner.state.groups[group_id].summary())
    }

    /// Finalized groups as dataset records, ordered by group id.
    pub fn export_records(&self) -> Result<Vec<DatasetRecord>> {
        let records: Vec<DatasetRecord> = self
            .read()
            .state
            .groups
            .values()
            .filter_map(GroupState::to_dataset_record)
            .collect();
        if records.is_empty() {
            return Err(DatasetError::Conflict("no finalized groups".into()));
        }
        Ok(records)
    }

    pub fn export_jsonl(&self) -> Result<String> {
        Ok(jsonl::to_jsonl(&self.export_records()?))
    }

    /// Writes the JSONL export to `path` and returns the record count.
    pub fn export_dataset(&self, path: &Path) -> Result<usize> {
        let _guard = self.export_lock.lock().unwrap_or_else(|p| p.into_inner());
        let records = self.export_records()?;
        std::fs::write(path, jsonl::to_jsonl(&records)).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(records.len())
    }

    /// Imports every record of a JSONL export; returns the record count.
    pub fn import_dataset(&self, path: &Path) -> Result<usize> {
        let records: Vec<DatasetRecord> = jsonl::read_jsonl(path).map_err(|e| invalid(e.to_string()))?;
        let n = records.len();
        for r in records {
            self.import_record(r)?;
        }
        Ok(n)
    }

    /// Pairwise win rates between source tags over finalized groups.
    pub fn report_win_rates(&self) -> Result<WinRateMatrix> {
        let records = self.export_records()?;
        let mut sources: Vec<String> = records
            .iter()
            .flat_map(|r| r.candidates.iter().map(|c| c.source.clone()))
            .collect();
        sources.sort();
        sources.dedup();
        let groups: Vec<SourcedRanking> = records
            .into_iter()
            .map(|r| SourcedRanking {
                sources: r.candidates.into_iter().map(|c| c.source).collect(),
                ranks: r.aggregate_ranks,
            })
            .collect();
        Ok(win_rate_matrix(&groups, &sources)?)
    }

    /// Filesystem path of a group image: `"lr"` or a candidate index.
    pub fn image_path(&self, group_id: &str, name: &str) -> Result<PathBuf> {
        let inner = self.read();
        let group = inner
            .state
            .groups
            .get(group_id)
            .ok_or_else(|| DatasetError::NotFound(format!("group {group_id}")))?;
        let rel = if name == "lr" {
            &group.record.lr_path
        } else {
            let idx: usize = name
                .parse()
                .map_err(|_| DatasetError::NotFound(format!("image {name} of group {group_id}")))?;
            &group
                .record
                .candidates
                .get(idx)
                .ok_or_else(|| DatasetError::NotFound(format!("image {name} of group {group_id}")))?
                .path
        };
        Ok(self.resolve_path(rel))
    }

    /// Forces a snapshot of a persistent service.
    pub fn snapshot(&self) -> Result<()> {
        let mut inner = self.write();
        let Inner { state, store } = &mut *inner;
        if let Some(store) = store.as_mut() {
            store.snapshot(state)?;
        }
        Ok(())
    }
}

/// `inv[order[p]] = p`.
pub fn inverse_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (p, &c) in order.iter().enumerate() {
        inv[c] = p;
    }
    inv
}
