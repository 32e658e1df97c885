//! The engine: one store behind a single-writer path, with utility scores
//! refreshed asynchronously after each commit.
//!
//! Every public mutation builds its events against a consistent read of the
//! state and commits them as one cluster. Reads take a shared lock and never
//! wait for scoring.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex, RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};
use ulid::Ulid;

use crate::config::{ConfigError, EngineConfig};
use crate::drift::{
    contextual_entropy, cross_modal_alignment, insight_drift, resonance, Alignment, DriftCause,
    DriftReport, FlagResolution, FlagStatus, ReferenceMark, ResolutionAction,
};
use crate::embedding::{EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::model::{
    new_version, ActorRef, Clock, EventId, FlagId, IdGenerator, MemoryTrace, RationaleVersion,
    RawTrace, SystemClock, Timestamp, TraceId, ValidationErrors, VersionId, Violation,
    ViolationCode,
};
use crate::regeneration::{
    reconstructability, regenerate, AuditQuestion, ContextBundle, ReconstructabilityScore,
    RegenerationError, RetainedContext,
};
use crate::scoring::{coherence, utility, UtilityInputs};
use crate::store::{
    Event, EventBody, FeedbackRecorded, FlagResolved, Lineage, LineageEdge, LinkPayload, NodeId,
    ReferenceIngest, ReferenceRevision, Relation, ReuseRecorded, SchemaViolation, SearchHit, Store,
    StoreError, TraceCaptured, TraceRecord, TraceRedacted,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Validation(ValidationErrors),
    #[error("unknown trace {0}")]
    UnknownTrace(TraceId),
    #[error("unknown flag {0}")]
    UnknownFlag(FlagId),
    #[error("trace {0} is already redacted")]
    AlreadyRedacted(TraceId),
    #[error("flag {0} is already resolved")]
    FlagAlreadyResolved(FlagId),
    #[error("revised resolution requires a revised rationale")]
    MissingRevisionPayload,
    #[error("only revised resolutions take a revised rationale")]
    UnexpectedRevision,
    #[error("a trace cannot reuse itself")]
    SelfReuse,
    #[error("endorsement {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("schema violation: {0}")]
    Schema(SchemaViolation),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Storage(StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Coarse error class, for mapping onto transport status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Validation,
    BadRequest,
    Unavailable,
    Internal,
}

impl EngineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            EngineError::UnknownTrace(_) | EngineError::UnknownFlag(_) => ErrorKind::NotFound,
            EngineError::AlreadyRedacted(_) | EngineError::FlagAlreadyResolved(_) => {
                ErrorKind::Conflict
            }
            EngineError::Validation(_)
            | EngineError::MissingRevisionPayload
            | EngineError::UnexpectedRevision
            | EngineError::SelfReuse
            | EngineError::OutOfRange(_)
            | EngineError::Schema(_) => ErrorKind::Validation,
            EngineError::InvalidArgument(_) => ErrorKind::BadRequest,
            EngineError::Embedding(EmbeddingError::ExternalServiceUnavailable(_)) => {
                ErrorKind::Unavailable
            }
            EngineError::Embedding(_) => ErrorKind::Validation,
            EngineError::Storage(_) | EngineError::Config(_) => ErrorKind::Internal,
        }
    }

    /// Stable machine-readable name of the error.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Validation(_) => "validation_failed",
            EngineError::UnknownTrace(_) => "unknown_trace",
            EngineError::UnknownFlag(_) => "unknown_flag",
            EngineError::AlreadyRedacted(_) => "already_redacted",
            EngineError::FlagAlreadyResolved(_) => "flag_already_resolved",
            EngineError::MissingRevisionPayload => "missing_revision_payload",
            EngineError::UnexpectedRevision => "unexpected_revision",
            EngineError::SelfReuse => "self_reuse",
            EngineError::OutOfRange(_) => "out_of_range",
            EngineError::InvalidArgument(_) => "invalid_argument",
            EngineError::Schema(_) => "schema_violation",
            EngineError::Embedding(EmbeddingError::ExternalServiceUnavailable(_)) => {
                "external_service_unavailable"
            }
            EngineError::Embedding(_) => "embedding_error",
            EngineError::Storage(_) => "storage_failure",
            EngineError::Config(_) => "config_error",
        }
    }

    fn violation(code: ViolationCode, field: &str, message: &str) -> Self {
        EngineError::Validation(ValidationErrors {
            violations: vec![Violation::new(code, field, message)],
        })
    }
}

impl From<SchemaViolation> for EngineError {
    fn from(v: SchemaViolation) -> Self {
        match v {
            SchemaViolation::UnknownTrace(t) | SchemaViolation::TraceRedacted(t) => {
                EngineError::UnknownTrace(t)
            }
            SchemaViolation::AlreadyRedacted(t) => EngineError::AlreadyRedacted(t),
            SchemaViolation::UnknownFlag(f) => EngineError::UnknownFlag(f),
            SchemaViolation::FlagAlreadyResolved(f) => EngineError::FlagAlreadyResolved(f),
            SchemaViolation::MissingRevisionPayload => EngineError::MissingRevisionPayload,
            SchemaViolation::UnexpectedRevision => EngineError::UnexpectedRevision,
            SchemaViolation::SelfReuse => EngineError::SelfReuse,
            SchemaViolation::OutOfRange(x) => EngineError::OutOfRange(x),
            SchemaViolation::InvalidTrace(e) => EngineError::Validation(e),
            other => EngineError::Schema(other),
        }
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::SchemaViolation(v) => v.into(),
            StoreError::Embedding(e) => EngineError::Embedding(e),
            StoreError::UnknownTrace(t) => EngineError::UnknownTrace(t),
            other => EngineError::Storage(other),
        }
    }
}

impl From<RegenerationError> for EngineError {
    fn from(e: RegenerationError) -> Self {
        match e {
            RegenerationError::Embedding(e) => EngineError::Embedding(e),
            other => EngineError::InvalidArgument(other.to_string()),
        }
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

// ---- results ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Captured {
    pub trace: MemoryTrace,
    /// False when an idempotency key matched an earlier capture.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionRequest {
    pub action: ResolutionAction,
    pub actor: ActorRef,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub revised_rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub report: DriftReport,
    pub version: Option<RationaleVersion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCheck {
    pub alignment: Alignment,
    /// Report raised for a misalignment; `None` when aligned or when an
    /// equivalent report already exists.
    pub flag: Option<DriftReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Absent when no live trace has positive coherence.
    pub entropy: Option<f64>,
    pub n: usize,
}

/// Cached utility of one trace and the inputs it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub utility: f64,
    pub inputs: UtilityInputs,
    /// Mean cosine of the head against the original and linked references.
    pub resonance: Option<f64>,
    /// Resonance fell below `tau_res` (or could not be computed).
    pub incoherent: bool,
    /// Log position the score reflects.
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub record: TraceRecord,
    pub head: RationaleVersion,
    pub score: Option<ScoreBreakdown>,
}

/// A drift report with the texts a reviewer compares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagView {
    #[serde(flatten)]
    pub report: DriftReport,
    pub subject: String,
    pub original_rationale: String,
    pub head_rationale: String,
    pub utility: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub lineage: Lineage,
    pub questions: Vec<AuditQuestion>,
    pub retained: RetainedContext,
    pub reconstructability: ReconstructabilityScore,
}

// ---- engine -----------------------------------------------------------

#[derive(Clone)]
pub struct EngineOptions {
    pub clock: Arc<dyn Clock>,
    /// Seed for id randomness; `None` seeds from the OS.
    pub id_seed: Option<u64>,
    /// Run the scoring worker thread. Without it, scores change only when
    /// [`Engine::refresh_scores`] is called.
    pub background_scoring: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            clock: Arc::new(SystemClock),
            id_seed: None,
            background_scoring: true,
        }
    }
}

struct Writer {
    ids: IdGenerator,
    last_snapshot: u64,
}

#[derive(Default)]
struct ScoreBoard {
    values: RwLock<HashMap<TraceId, ScoreBreakdown>>,
    dirty: Mutex<BTreeSet<TraceId>>,
    wake: Condvar,
    compute: Mutex<()>,
    stop: Mutex<bool>,
}

struct Inner {
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    store: RwLock<Store>,
    writer: Mutex<Writer>,
    scores: ScoreBoard,
}

pub struct Engine {
    inner: Arc<Inner>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &*self.inner.store.read())
            .finish()
    }
}

/// Events being assembled for one commit.
struct Tx<'a> {
    store: &'a Store,
    ids: &'a mut IdGenerator,
    now: Timestamp,
    events: Vec<Event>,
    touched: Vec<TraceId>,
}

impl Tx<'_> {
    fn id(&mut self) -> Ulid {
        self.ids.next(self.now)
    }

    fn push(&mut self, body: EventBody) {
        let event_id = EventId(self.id());
        self.events.push(Event {
            event_id,
            at: self.now,
            body,
        });
    }
}

impl Engine {
    pub fn open(config: EngineConfig) -> Result<Self> {
        Self::open_with(config, EngineOptions::default())
    }

    pub fn in_memory() -> Self {
        Self::open(EngineConfig::default()).expect("default config is valid")
    }

    pub fn open_with(config: EngineConfig, options: EngineOptions) -> Result<Self> {
        config.validate()?;
        config.prepare_data_dir()?;
        let embedder: Arc<dyn TextEmbedder> = Arc::from(config.embedder.build()?);
        let store = match &config.data_dir {
            Some(dir) => Store::open(dir, embedder, config.rendering)?,
            None => Store::in_memory(embedder, config.rendering),
        };
        let mut ids = match options.id_seed {
            Some(seed) => IdGenerator::seeded(seed),
            None => IdGenerator::new(),
        };
        observe_ids(&mut ids, &store);
        let last_snapshot = store.state().position;
        let traces: Vec<TraceId> = store.state().traces.keys().copied().collect();
        let inner = Arc::new(Inner {
            config,
            clock: options.clock,
            store: RwLock::new(store),
            writer: Mutex::new(Writer { ids, last_snapshot }),
            scores: ScoreBoard::default(),
        });
        inner.mark_dirty(traces);
        inner.refresh_scores();
        let engine = Engine {
            inner,
            worker: Mutex::new(None),
        };
        if options.background_scoring {
            engine.start_scoring_worker();
        }
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.config
    }

    /// Shared read access to the store.
    pub fn read(&self) -> RwLockReadGuard<'_, Store> {
        self.inner.store.read()
    }

    pub fn position(&self) -> u64 {
        self.read().state().position
    }

    pub fn state_hash(&self) -> String {
        self.read().state().state_hash()
    }

    pub fn now(&self) -> Timestamp {
        self.inner.clock.now()
    }

    // ---- scoring worker ----

    pub fn start_scoring_worker(&self) {
        let mut slot = self.worker.lock();
        if slot.is_some() {
            return;
        }
        *self.inner.scores.stop.lock() = false;
        let inner = Arc::clone(&self.inner);
        let handle = std::thread::Builder::new()
            .name("insight-scoring".into())
            .spawn(move || inner.scoring_loop())
            .expect("spawn scoring worker");
        *slot = Some(handle);
    }

    pub fn stop_scoring_worker(&self) {
        let handle = self.worker.lock().take();
        if let Some(h) = handle {
            {
                let _dirty = self.inner.scores.dirty.lock();
                *self.inner.scores.stop.lock() = true;
                self.inner.scores.wake.notify_all();
            }
            let _ = h.join();
        }
    }

    /// Recomputes every pending score now. Returns how many were refreshed.
    pub fn refresh_scores(&self) -> usize {
        self.inner.refresh_scores()
    }

    pub fn pending_scores(&self) -> usize {
        self.inner.scores.dirty.lock().len()
    }

    pub fn score(&self, trace_id: TraceId) -> Option<ScoreBreakdown> {
        self.inner.scores.values.read().get(&trace_id).copied()
    }

    pub fn utility(&self, trace_id: TraceId) -> f64 {
        self.score(trace_id).map_or(0.0, |s| s.utility)
    }

    /// Stops the worker, drains pending scores and writes a snapshot.
    pub fn shutdown(&self) -> Result<()> {
        self.stop_scoring_worker();
        self.refresh_scores();
        self.snapshot()
    }

    pub fn snapshot(&self) -> Result<()> {
        let _w = self.inner.writer.lock();
        self.read().write_snapshot()?;
        Ok(())
    }

    // ---- mutations ----

    fn mutate<T>(&self, build: impl FnOnce(&mut Tx<'_>) -> Result<T>) -> Result<T> {
        let mut writer = self.inner.writer.lock();
        let (value, events, touched) = {
            let store = self.inner.store.read();
            let last = store.state().last_event_at.unwrap_or(Timestamp(i64::MIN));
            let mut tx = Tx {
                store: &store,
                ids: &mut writer.ids,
                now: self.inner.clock.now().max(last),
                events: Vec::new(),
                touched: Vec::new(),
            };
            let value = build(&mut tx)?;
            (value, tx.events, tx.touched)
        };
        if events.is_empty() {
            return Ok(value);
        }
        let position = self.inner.store.write().append(events)?;
        let every = self.inner.config.snapshot_every;
        if every > 0 && position - writer.last_snapshot >= every {
            match self.inner.store.read().write_snapshot() {
                Ok(()) => writer.last_snapshot = position,
                Err(e) => tracing::warn!(error = %e, "periodic snapshot failed"),
            }
        }
        drop(writer);
        self.inner.mark_dirty(touched);
        Ok(value)
    }

    /// Validates and records a new trace. With an idempotency key that was
    /// already used, returns the original trace and records nothing.
    pub fn capture(&self, raw: RawTrace, idempotency_key: Option<String>) -> Result<Captured> {
        self.mutate(|tx| {
            if let Some(key) = &idempotency_key {
                if let Some(id) = tx.store.state().trace_by_idempotency_key(key) {
                    return Ok(Captured {
                        trace: tx.store.state().traces[&id].trace.clone(),
                        created: false,
                    });
                }
            }
            let trace = capture_events(tx, raw, idempotency_key)?;
            Ok(Captured {
                trace,
                created: true,
            })
        })
    }

    /// Captures many traces in one atomic cluster.
    pub fn capture_batch(&self, raws: Vec<RawTrace>) -> Result<Vec<MemoryTrace>> {
        self.mutate(|tx| raws.into_iter().map(|raw| capture_events(tx, raw, None)).collect())
    }

    pub fn revise(
        &self,
        trace_id: TraceId,
        rationale: String,
        author: ActorRef,
        change_note: String,
    ) -> Result<RationaleVersion> {
        check_revision(&rationale, &author)?;
        self.mutate(|tx| {
            let rec = tx.store.state().live_trace(trace_id)?;
            let head = &tx.store.state().versions[&rec.head()].version;
            let version_id = VersionId(tx.id());
            let v = new_version(trace_id, Some(head), version_id, rationale, author, change_note, tx.now);
            tx.push(EventBody::VersionAdded(v.clone()));
            tx.touched.push(trace_id);
            Ok(v)
        })
    }

    pub fn link(&self, from_id: NodeId, to_id: NodeId, relation: Relation) -> Result<LineageEdge> {
        let edge = LineageEdge {
            from_id,
            to_id,
            relation,
        };
        self.mutate(|tx| {
            tx.push(EventBody::LinkAdded(LinkPayload::Edge(edge)));
            for n in [from_id, to_id] {
                if tx.store.state().trace(TraceId(n.0)).is_some() {
                    tx.touched.push(TraceId(n.0));
                }
            }
            Ok(edge)
        })
    }

    /// Records a new revision of an external reference document. Traces
    /// whose links name `reference` (plus `linked_traces`) depend on it.
    pub fn ingest_reference(
        &self,
        reference: String,
        content: String,
        linked_traces: Vec<TraceId>,
    ) -> Result<ReferenceRevision> {
        if reference.trim().is_empty() {
            return Err(EngineError::InvalidArgument("reference must be non-empty".into()));
        }
        let revision = self.mutate(|tx| {
            for t in &linked_traces {
                tx.store.state().live_trace(*t)?;
            }
            let state = tx.store.state();
            let revision = state.references.get(&reference).map_or(1, |r| r.revisions.len() as u32 + 1);
            let mut touched = state.dependents_of(&reference);
            touched.extend(linked_traces.iter().copied());
            tx.touched.extend(touched);
            tx.push(EventBody::LinkAdded(LinkPayload::Reference(ReferenceIngest {
                reference: reference.clone(),
                content: content.clone(),
                linked_traces,
            })));
            Ok(ReferenceRevision {
                revision,
                content,
                recorded_at: tx.now,
            })
        })?;
        Ok(revision)
    }

    pub fn redact(&self, trace_id: TraceId, actor: ActorRef) -> Result<TraceRecord> {
        if !actor.is_valid() {
            return Err(EngineError::violation(ViolationCode::MissingActor, "actor", "actor_id is required"));
        }
        self.mutate(|tx| {
            match tx.store.state().trace(trace_id) {
                None => return Err(EngineError::UnknownTrace(trace_id)),
                Some(r) if r.is_redacted() => return Err(EngineError::AlreadyRedacted(trace_id)),
                Some(_) => {}
            }
            tx.push(EventBody::TraceRedacted(TraceRedacted { trace_id, actor }));
            tx.touched.push(trace_id);
            Ok(())
        })?;
        Ok(self.read().state().traces[&trace_id].clone())
    }

    pub fn record_reuse(&self, trace_id: TraceId, reusing_trace_id: TraceId) -> Result<u64> {
        self.mutate(|tx| {
            let state = tx.store.state();
            let count = state.live_trace(trace_id)?.reuse_count + 1;
            state.live_trace(reusing_trace_id)?;
            if trace_id == reusing_trace_id {
                return Err(EngineError::SelfReuse);
            }
            tx.push(EventBody::ReuseRecorded(ReuseRecorded {
                trace_id,
                reusing_trace_id,
            }));
            tx.touched.push(trace_id);
            Ok(count)
        })
    }

    /// Records an endorsement in [0, 1]; returns the new feedback mean.
    pub fn record_feedback(
        &self,
        trace_id: TraceId,
        endorsement: f64,
        actor: ActorRef,
        note: String,
    ) -> Result<f64> {
        self.mutate(|tx| {
            let rec = tx.store.state().live_trace(trace_id)?;
            if !(endorsement.is_finite() && (0.0..=1.0).contains(&endorsement)) {
                return Err(EngineError::OutOfRange(endorsement));
            }
            if !actor.is_valid() {
                return Err(EngineError::violation(ViolationCode::MissingActor, "actor", "actor_id is required"));
            }
            let mean = (rec.feedback_sum + endorsement) / (rec.feedback_count + 1) as f64;
            tx.push(EventBody::FeedbackRecorded(FeedbackRecorded {
                trace_id,
                endorsement,
                actor,
                note,
            }));
            tx.touched.push(trace_id);
            Ok(mean)
        })
    }

    /// Compares every live, unretired trace against its reviewed baseline
    /// and its reference documents, and records a report for each new
    /// crossing of `tau_drift`. Re-running on an unchanged store records
    /// nothing.
    pub fn scan_for_drift(&self) -> Result<Vec<DriftReport>> {
        let tau = self.inner.config.thresholds.tau_drift;
        self.mutate(|tx| {
            let candidates = drift_candidates(tx.store, tau)?;
            let mut out = Vec::new();
            for c in candidates {
                let report = DriftReport {
                    flag_id: FlagId(tx.id()),
                    trace_id: c.trace_id,
                    reference: c.reference,
                    original_version: c.original_version,
                    current_version: c.current_version,
                    external_context: c.external_context,
                    drift: c.drift,
                    cause: c.cause,
                    status: FlagStatus::Open,
                    message: c.cause.message().to_string(),
                    created_at: tx.now,
                    resolution: None,
                };
                if tx.store.state().has_equivalent_flag(&report) {
                    continue;
                }
                tx.push(EventBody::DriftFlagged(report.clone()));
                tx.touched.push(report.trace_id);
                out.push(report);
            }
            Ok(out)
        })
    }

    /// Compares an external rendering of a trace (a summary, a transcript)
    /// with its head rationale and flags a misalignment.
    pub fn check_alignment(&self, trace_id: TraceId, rendering: String) -> Result<AlignmentCheck> {
        let tau_align = self.inner.config.thresholds.tau_align;
        self.mutate(|tx| {
            let rec = tx.store.state().live_trace(trace_id)?;
            let head = &tx.store.state().versions[&rec.head()].version;
            let own = tx.store.rendering(rec, head);
            let alignment = cross_modal_alignment(tx.store.embedder(), &own, &rendering, tau_align)?;
            if !alignment.misaligned {
                return Ok(AlignmentCheck {
                    alignment,
                    flag: None,
                });
            }
            let cause = match alignment.score {
                Some(_) => DriftCause::CrossModal,
                None => DriftCause::DegenerateEmbedding,
            };
            let report = DriftReport {
                flag_id: FlagId(tx.id()),
                trace_id,
                reference: None,
                original_version: head.version_id,
                current_version: None,
                external_context: Some(rendering),
                drift: alignment.score.map_or(1.0, |s| (1.0 - s).clamp(0.0, 2.0)),
                cause,
                status: FlagStatus::Open,
                message: cause.message().to_string(),
                created_at: tx.now,
                resolution: None,
            };
            if tx.store.state().has_equivalent_flag(&report) {
                return Ok(AlignmentCheck {
                    alignment,
                    flag: None,
                });
            }
            tx.push(EventBody::DriftFlagged(report.clone()));
            tx.touched.push(trace_id);
            Ok(AlignmentCheck {
                alignment,
                flag: Some(report),
            })
        })
    }

    /// Closes an open flag. A revision creates the new version and the
    /// resolution in one commit.
    pub fn resolve_flag(&self, flag_id: FlagId, req: ResolutionRequest) -> Result<Resolved> {
        self.mutate(|tx| {
            let state = tx.store.state();
            let flag = state.flags.get(&flag_id).ok_or(EngineError::UnknownFlag(flag_id))?;
            if !flag.status.is_open() {
                return Err(EngineError::FlagAlreadyResolved(flag_id));
            }
            if !req.actor.is_valid() {
                return Err(EngineError::violation(ViolationCode::MissingActor, "actor", "actor_id is required"));
            }
            let trace_id = flag.trace_id;
            let version = match (req.action, req.revised_rationale) {
                (ResolutionAction::Revised, None) => return Err(EngineError::MissingRevisionPayload),
                (ResolutionAction::Revised, Some(text)) => {
                    check_revision(&text, &req.actor)?;
                    let rec = state.live_trace(trace_id)?;
                    let head = &state.versions[&rec.head()].version;
                    let version_id = VersionId(tx.id());
                    let v = new_version(trace_id, Some(head), version_id, text, req.actor.clone(), req.note.clone(), tx.now);
                    tx.push(EventBody::VersionAdded(v.clone()));
                    Some(v)
                }
                (_, Some(_)) => return Err(EngineError::UnexpectedRevision),
                (_, None) => None,
            };
            let resolution = FlagResolution {
                action: req.action,
                actor: req.actor,
                note: req.note,
                resolved_at: tx.now,
                revision: version.as_ref().map(|v| v.version_id),
            };
            let mut report = flag.clone();
            report.status = req.action.into();
            report.resolution = Some(resolution.clone());
            tx.push(EventBody::FlagResolved(FlagResolved {
                flag_id,
                resolution,
            }));
            tx.touched.push(trace_id);
            Ok(Resolved { report, version })
        })
    }

    /// Appends every event of a JSON-Lines log in one cluster.
    pub fn import(&self, reader: impl Read) -> Result<u64> {
        let mut writer = self.inner.writer.lock();
        let n = self.inner.store.write().import(reader)?;
        let store = self.inner.store.read();
        observe_ids(&mut writer.ids, &store);
        let traces: Vec<TraceId> = store.state().traces.keys().copied().collect();
        drop(store);
        drop(writer);
        self.inner.mark_dirty(traces);
        Ok(n)
    }

    // ---- reads ----

    pub fn export(&self, writer: impl Write) -> Result<u64> {
        Ok(self.read().export(writer)?)
    }

    pub fn events(&self) -> Result<Vec<Event>> {
        Ok(self.read().events()?)
    }

    pub fn trace(&self, trace_id: TraceId) -> Result<TraceView> {
        let store = self.read();
        let rec = store
            .state()
            .trace(trace_id)
            .ok_or(EngineError::UnknownTrace(trace_id))?;
        Ok(TraceView {
            record: rec.clone(),
            head: store.state().versions[&rec.head()].version.clone(),
            score: self.score(trace_id),
        })
    }

    pub fn search(&self, query: &str, k: usize, as_of: Option<Timestamp>) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(EngineError::InvalidArgument("k must be at least 1".into()));
        }
        // lock order: store before scores
        let store = self.read();
        let scores = self.inner.scores.values.read();
        Ok(store.search(query, k, as_of, |t| scores.get(&t).map_or(0.0, |s| s.utility))?)
    }

    pub fn lineage(&self, trace_id: TraceId) -> Result<Lineage> {
        Ok(self.read().lineage(trace_id)?)
    }

    pub fn regenerate(&self, query: &str, as_of: Option<Timestamp>, k: usize) -> Result<ContextBundle> {
        // lock order: store before scores
        let store = self.read();
        let scores = self.inner.scores.values.read();
        Ok(regenerate(
            &store,
            query,
            as_of,
            k,
            |t| scores.get(&t).map_or(0.0, |s| s.utility),
            &self.inner.config.coherence,
        )?)
    }

    /// Lineage plus reconstructability of one trace's retained context.
    pub fn audit(&self, trace_id: TraceId, questions: &[AuditQuestion]) -> Result<AuditReport> {
        let store = self.read();
        let lineage = store.lineage(trace_id)?;
        let rec = &store.state().traces[&trace_id];
        let retained = RetainedContext::from_lineage(&rec.trace, &lineage);
        let score = reconstructability(std::slice::from_ref(&retained), questions)?;
        Ok(AuditReport {
            lineage,
            questions: questions.to_vec(),
            retained,
            reconstructability: score,
        })
    }

    /// Contextual entropy over the coherence of every live trace.
    pub fn entropy(&self) -> EntropyReport {
        let store = self.read();
        let state = store.state();
        let now = self.now().max(state.last_event_at.unwrap_or(Timestamp(i64::MIN)));
        let params = &self.inner.config.coherence;
        let weights: Vec<f64> = state
            .traces
            .values()
            .filter(|r| !r.is_redacted())
            .map(|r| coherence(r.trace.created_at, r.review, now, params))
            .collect();
        EntropyReport {
            entropy: contextual_entropy(&weights).ok(),
            n: weights.iter().filter(|c| **c > 0.0).count(),
        }
    }

    pub fn flags(&self, status: Option<FlagStatus>) -> Vec<FlagView> {
        let store = self.read();
        let state = store.state();
        state
            .flags
            .values()
            .filter(|f| status.is_none_or(|s| f.status == s))
            .map(|f| {
                let rec = &state.traces[&f.trace_id];
                FlagView {
                    report: f.clone(),
                    subject: rec.trace.subject.clone(),
                    original_rationale: state.versions[&f.original_version].version.rationale.clone(),
                    head_rationale: state.versions[&rec.head()].version.rationale.clone(),
                    utility: self.score(f.trace_id).map(|s| s.utility),
                }
            })
            .collect()
    }

    pub fn flag(&self, flag_id: FlagId) -> Result<DriftReport> {
        self.read()
            .state()
            .flags
            .get(&flag_id)
            .cloned()
            .ok_or(EngineError::UnknownFlag(flag_id))
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.stop_scoring_worker();
    }
}

fn observe_ids(ids: &mut IdGenerator, store: &Store) {
    let s = store.state();
    let floors = [
        s.last_event_id.map(|e| e.0),
        s.traces.keys().next_back().map(|t| t.0),
        s.versions.keys().next_back().map(|v| v.0),
        s.flags.keys().next_back().map(|f| f.0),
    ];
    for f in floors.into_iter().flatten() {
        ids.observe(f);
    }
}

fn check_revision(rationale: &str, author: &ActorRef) -> Result<()> {
    let mut violations = Vec::new();
    if rationale.trim().is_empty() {
        violations.push(Violation::new(ViolationCode::EmptyRationale, "rationale", "rationale must be non-empty"));
    }
    if !author.is_valid() {
        violations.push(Violation::new(ViolationCode::MissingActor, "author", "actor_id is required"));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(EngineError::Validation(ValidationErrors { violations }))
    }
}

fn capture_events(tx: &mut Tx<'_>, raw: RawTrace, idempotency_key: Option<String>) -> Result<MemoryTrace> {
    let now = tx.now;
    let ids = &mut *tx.ids;
    let trace = crate::model::validate_trace(raw, now, || TraceId(ids.next(now)))
        .map_err(EngineError::Validation)?;
    let version = new_version(
        trace.trace_id,
        None,
        VersionId(tx.id()),
        trace.rationale.clone(),
        trace.actor.clone(),
        String::new(),
        trace.created_at,
    );
    tx.touched.push(trace.trace_id);
    tx.push(EventBody::TraceCaptured(Box::new(TraceCaptured {
        trace: trace.clone(),
        version,
        idempotency_key,
    })));
    Ok(trace)
}

struct DriftCandidate {
    trace_id: TraceId,
    reference: Option<ReferenceMark>,
    original_version: VersionId,
    current_version: Option<VersionId>,
    external_context: Option<String>,
    drift: f64,
    cause: DriftCause,
}


fn drift_candidates(store: &Store, tau: f64) -> Result<Vec<DriftCandidate>> {
    let state = store.state();
    let mut ref_cache: HashMap<(String, u32), EmbeddingVector> = HashMap::new();
    let mut embed_ref = |doc: &str, rev: &ReferenceRevision| -> Result<EmbeddingVector> {
        let key = (doc.to_string(), rev.revision);
        if let Some(v) = ref_cache.get(&key) {
            return Ok(v.clone());
        }
        let v = store.embedder().embed(&rev.content)?;
        ref_cache.insert(key, v.clone());
        Ok(v)
    };
    let mut out = Vec::new();
    for rec in state.traces.values() {
        if rec.is_redacted() || rec.review == crate::scoring::ReviewStatus::Retired {
            continue;
        }
        let trace_id = rec.trace.trace_id;
        let head = rec.head();
        let baseline = rec.reviewed_version.unwrap_or_else(|| rec.original());
        if head != baseline {
            let (a, b) = (
                store.version_embedding(baseline).expect("indexed"),
                store.version_embedding(head).expect("indexed"),
            );
            let d = insight_drift(&a, &b)?;
            if d.degenerate || d.value > tau {
                out.push(DriftCandidate {
                    trace_id,
                    reference: None,
                    original_version: baseline,
                    current_version: Some(head),
                    external_context: None,
                    drift: d.value,
                    cause: if d.degenerate {
                        DriftCause::DegenerateEmbedding
                    } else {
                        DriftCause::ReuseDivergence
                    },
                });
            }
        }
        for doc in state.references_of(rec) {
            let baseline_rev = rec
                .acknowledged_refs
                .get(&doc.reference)
                .and_then(|n| doc.revision(*n))
                .or_else(|| doc.as_of(rec.recorded_at))
                .unwrap_or(&doc.revisions[0]);
            let current = doc.head();
            if current.revision == baseline_rev.revision {
                continue;
            }
            let a = embed_ref(&doc.reference, baseline_rev)?;
            let b = embed_ref(&doc.reference, current)?;
            let d = insight_drift(&a, &b)?;
            if d.degenerate || d.value > tau {
                out.push(DriftCandidate {
                    trace_id,
                    reference: Some(ReferenceMark {
                        reference: doc.reference.clone(),
                        baseline_revision: baseline_rev.revision,
                        current_revision: current.revision,
                    }),
                    original_version: head,
                    current_version: None,
                    external_context: Some(current.content.clone()),
                    drift: d.value,
                    cause: if d.degenerate {
                        DriftCause::DegenerateEmbedding
                    } else {
                        DriftCause::ReferenceUpdate
                    },
                });
            }
        }
    }
    Ok(out)
}

impl Inner {
    fn mark_dirty(&self, traces: impl IntoIterator<Item = TraceId>) {
        let mut dirty = self.scores.dirty.lock();
        dirty.extend(traces);
        if !dirty.is_empty() {
            self.scores.wake.notify_one();
        }
    }

    fn scoring_loop(&self) {
        loop {
            {
                let mut dirty = self.scores.dirty.lock();
                while dirty.is_empty() && !*self.scores.stop.lock() {
                    self.scores.wake.wait(&mut dirty);
                }
                if *self.scores.stop.lock() {
                    return;
                }
            }
            self.refresh_scores();
        }
    }

    fn refresh_scores(&self) -> usize {
        const CHUNK: usize = 4_096;
        let _compute = self.scores.compute.lock();
        let batch: Vec<TraceId> = std::mem::take(&mut *self.scores.dirty.lock())
            .into_iter()
            .collect();
        for chunk in batch.chunks(CHUNK) {
            let computed: Vec<(TraceId, Option<ScoreBreakdown>)> = {
                let store = self.store.read();
                let mut refs = HashMap::new();
                chunk
                    .iter()
                    .map(|t| (*t, self.compute_score(&store, *t, &mut refs)))
                    .collect()
            };
            let mut values = self.scores.values.write();
            for (t, s) in computed {
                match s {
                    Some(s) => values.insert(t, s),
                    None => values.remove(&t),
                };
            }
        }
        batch.len()
    }

    fn compute_score(
        &self,
        store: &Store,
        trace_id: TraceId,
        ref_cache: &mut HashMap<(String, u32), Option<EmbeddingVector>>,
    ) -> Option<ScoreBreakdown> {
        let state = store.state();
        let rec = state.trace(trace_id).filter(|r| !r.is_redacted())?;
        let head = store.version_embedding(rec.head())?;
        let original = store.version_embedding(rec.original())?;
        let drift = insight_drift(&original, &head).map_or(1.0, |d| d.value).clamp(0.0, 1.0);
        let mut references = vec![original];
        for doc in state.references_of(rec) {
            let rev = doc.head();
            let key = (doc.reference.clone(), rev.revision);
            let emb = ref_cache
                .entry(key)
                .or_insert_with(|| match store.embedder().embed(&rev.content) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        tracing::warn!(reference = %doc.reference, error = %e, "reference embedding failed");
                        None
                    }
                })
                .clone();
            references.extend(emb);
        }
        let res = resonance(&head, &references).ok();
        let inputs = UtilityInputs {
            reuse_count: rec.reuse_count,
            feedback: rec.feedback_mean().unwrap_or(0.0).clamp(0.0, 1.0),
            alignment: res.unwrap_or(0.0).clamp(0.0, 1.0),
            drift,
        };
        Some(ScoreBreakdown {
            utility: utility(&inputs, &self.config.weights),
            inputs,
            resonance: res,
            incoherent: res.is_none_or(|r| r < self.config.thresholds.tau_res),
            position: state.position,
        })
    }
}
