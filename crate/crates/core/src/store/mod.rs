//! Event-sourced persistence with in-memory indexes.
//!
//! Every mutation is an [`Event`] appended to a JSON-Lines log; the
//! materialized [`State`] is the fold of that log and the [`VectorIndex`]
//! holds one embedding per rationale version. Replaying a log from scratch
//! yields a state whose canonical serialization is identical to the live one.

mod event;
mod index;
mod log;
mod state;

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use event::{
    Event, EventBody, EventKind, FeedbackRecorded, FlagResolved, LineageEdge, LinkPayload, NodeId,
    ReferenceIngest, Relation, ReuseRecorded, TraceCaptured, TraceRedacted,
};
pub use index::{Candidate, VectorIndex};
pub use log::{read_events, write_events, EventLog, LogError, LOG_FILE, SNAPSHOT_FILE};
pub use state::{
    EdgeEntry, ReferenceRecord, ReferenceRevision, SchemaViolation, State, TraceRecord,
    VersionEntry,
};

use crate::drift::DriftReport;
use crate::embedding::{EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::model::{RationaleVersion, Timestamp, TraceId, VersionId};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    StorageFailure(#[from] LogError),
    #[error("schema violation: {0}")]
    SchemaViolation(#[from] SchemaViolation),
    #[error("corrupt log at position {position}: {reason}")]
    CorruptLog { position: u64, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("unknown trace {0}")]
    UnknownTrace(TraceId),
}

/// Which text of a version is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    RationaleOnly,
    #[default]
    RationaleWithAssumptions,
}

impl RenderMode {
    pub fn render(&self, rationale: &str, assumptions: &[String]) -> String {
        match self {
            RenderMode::RationaleOnly => rationale.to_string(),
            RenderMode::RationaleWithAssumptions => {
                let mut s = rationale.to_string();
                for a in assumptions {
                    s.push('\n');
                    s.push_str(a);
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub trace_id: TraceId,
    pub version_id: VersionId,
    pub similarity: f64,
    pub utility: f64,
    pub rank: usize,
}

/// Version chain, derivation edges and flag history of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub trace_id: TraceId,
    pub redacted: bool,
    pub versions: Vec<RationaleVersion>,
    /// Non-supersedes edges touching the trace or any of its versions.
    pub derivations: Vec<LineageEdge>,
    pub references: Vec<String>,
    pub flags: Vec<DriftReport>,
}

/// Ranking order: similarity desc, utility desc, created_at desc, id asc.
pub fn rank_order(a: &(Candidate, f64), b: &(Candidate, f64)) -> Ordering {
    b.0.similarity
        .total_cmp(&a.0.similarity)
        .then_with(|| b.1.total_cmp(&a.1))
        .then_with(|| b.0.created_at.cmp(&a.0.created_at))
        .then_with(|| a.0.trace_id.cmp(&b.0.trace_id))
}

pub struct Store {
    state: State,
    index: VectorIndex,
    embedder: Arc<dyn TextEmbedder>,
    render: RenderMode,
    log: EventLog,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("position", &self.state.position)
            .field("traces", &self.state.traces.len())
            .finish()
    }
}

impl Store {
    pub fn in_memory(embedder: Arc<dyn TextEmbedder>, render: RenderMode) -> Self {
        let dims = embedder.dims();
        Store {
            state: State::new(),
            index: VectorIndex::new(dims),
            embedder,
            render,
            log: EventLog::memory(),
        }
    }

    /// Opens (or creates) a store in `dir`: loads the snapshot if present and
    /// replays the log tail after it.
    pub fn open(
        dir: &Path,
        embedder: Arc<dyn TextEmbedder>,
        render: RenderMode,
    ) -> Result<Self, StoreError> {
        let log = EventLog::open_dir(dir)?;
        let snapshot = EventLog::read_snapshot(dir)?;
        let events = log.read_all().map_err(|e| match e {
            LogError::Malformed { line, reason } => StoreError::CorruptLog {
                position: line,
                reason,
            },
            other => StoreError::StorageFailure(other),
        })?;
        let mut state = snapshot.unwrap_or_default();
        let start = state.position;
        if (events.len() as u64) < start {
            return Err(StoreError::CorruptLog {
                position: events.len() as u64,
                reason: format!("snapshot at position {start} is ahead of the log"),
            });
        }
        for (i, e) in events.iter().enumerate().skip(start as usize) {
            state.apply(e).map_err(|v| StoreError::CorruptLog {
                position: i as u64 + 1,
                reason: v.to_string(),
            })?;
        }
        let mut store = Store {
            state,
            index: VectorIndex::new(embedder.dims()),
            embedder,
            render,
            log,
        };
        store.rebuild_index()?;
        Ok(store)
    }

    /// Folds `events` into a fresh in-memory store.
    pub fn replay(
        events: impl IntoIterator<Item = Event>,
        embedder: Arc<dyn TextEmbedder>,
        render: RenderMode,
    ) -> Result<Self, StoreError> {
        let mut store = Store::in_memory(embedder, render);
        let mut applied = Vec::new();
        for (i, e) in events.into_iter().enumerate() {
            store.state.apply(&e).map_err(|v| StoreError::CorruptLog {
                position: i as u64 + 1,
                reason: v.to_string(),
            })?;
            applied.push(e);
        }
        store.log = EventLog::Memory(applied);
        store.rebuild_index()?;
        Ok(store)
    }

    fn rebuild_index(&mut self) -> Result<(), StoreError> {
        let mut index = VectorIndex::new(self.embedder.dims());
        for rec in self.state.traces.values() {
            index.add_trace(rec.trace.trace_id, rec.trace.created_at, rec.recorded_at);
            if rec.is_redacted() {
                index.mark_redacted(rec.trace.trace_id);
                continue;
            }
            for entry in self.state.chain(rec) {
                let text = self.render.render(&entry.version.rationale, &rec.trace.assumptions);
                let emb = self.embedder.embed(&text)?;
                index.add_version(rec.trace.trace_id, entry.version.version_id, entry.recorded_at, &emb);
            }
        }
        self.index = index;
        Ok(())
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn embedder(&self) -> &dyn TextEmbedder {
        self.embedder.as_ref()
    }

    pub fn embedder_arc(&self) -> Arc<dyn TextEmbedder> {
        Arc::clone(&self.embedder)
    }

    pub fn render_mode(&self) -> RenderMode {
        self.render
    }

    pub fn is_persistent(&self) -> bool {
        self.log.dir().is_some()
    }

    /// Text that is embedded for `version` of `trace`.
    pub fn rendering(&self, trace: &TraceRecord, version: &RationaleVersion) -> String {
        self.render.render(&version.rationale, &trace.trace.assumptions)
    }

    pub fn version_embedding(&self, version_id: VersionId) -> Option<EmbeddingVector> {
        self.index.embedding(version_id)
    }

    fn pending_embeddings(&self, events: &[Event]) -> Result<Vec<Option<EmbeddingVector>>, StoreError> {
        events
            .iter()
            .map(|e| match &e.body {
                EventBody::TraceCaptured(c) => {
                    let text = self.render.render(&c.version.rationale, &c.trace.assumptions);
                    Ok(Some(self.embedder.embed(&text)?))
                }
                EventBody::VersionAdded(v) => {
                    let assumptions = self
                        .state
                        .trace(v.trace_id)
                        .map(|r| r.trace.assumptions.as_slice())
                        .unwrap_or_default();
                    let text = self.render.render(&v.rationale, assumptions);
                    Ok(Some(self.embedder.embed(&text)?))
                }
                _ => Ok(None),
            })
            .collect()
    }

    /// Appends a cluster of events atomically: either every event is folded
    /// in and durably logged, or none is. Returns the last log position.
    pub fn append(&mut self, events: Vec<Event>) -> Result<u64, StoreError> {
        if events.is_empty() {
            return Ok(self.state.position);
        }
        let embeddings = self.pending_embeddings(&events)?;
        for (i, e) in events.iter().enumerate() {
            if let Err(v) = self.state.apply(e) {
                if i > 0 {
                    self.recover()?;
                }
                return Err(v.into());
            }
        }
        if let Err(e) = self.log.append(&events) {
            self.recover()?;
            return Err(e.into());
        }
        for (e, emb) in events.iter().zip(embeddings) {
            self.index_event(e, emb);
        }
        Ok(self.state.position)
    }

    fn index_event(&mut self, event: &Event, embedding: Option<EmbeddingVector>) {
        match &event.body {
            EventBody::TraceCaptured(c) => {
                let rec = &self.state.traces[&c.trace.trace_id];
                self.index
                    .add_trace(c.trace.trace_id, c.trace.created_at, rec.recorded_at);
                if let Some(emb) = embedding {
                    self.index
                        .add_version(c.trace.trace_id, c.version.version_id, rec.recorded_at, &emb);
                }
            }
            EventBody::VersionAdded(v) => {
                if let Some(emb) = embedding {
                    self.index.add_version(v.trace_id, v.version_id, event.at, &emb);
                }
            }
            EventBody::TraceRedacted(r) => self.index.mark_redacted(r.trace_id),
            _ => {}
        }
    }

    /// Rebuilds state from the durable log after a failed append.
    fn recover(&mut self) -> Result<(), StoreError> {
        let events = self.log.read_all()?;
        let mut state = State::new();
        for (i, e) in events.iter().enumerate() {
            state.apply(e).map_err(|v| StoreError::CorruptLog {
                position: i as u64 + 1,
                reason: v.to_string(),
            })?;
        }
        self.state = state;
        self.rebuild_index()
    }

    pub fn events(&self) -> Result<Vec<Event>, StoreError> {
        Ok(self.log.read_all()?)
    }

    pub fn export(&self, writer: impl Write) -> Result<u64, StoreError> {
        let events = self.events()?;
        write_events(writer, &events).map_err(|source| {
            StoreError::StorageFailure(LogError::Io {
                path: "<export>".into(),
                source,
            })
        })?;
        Ok(events.len() as u64)
    }

    /// Reads a JSON-Lines log and appends every event in one durable cluster.
    /// Parse errors and schema violations report the offending line.
    pub fn import(&mut self, reader: impl Read) -> Result<u64, StoreError> {
        let mut events = Vec::new();
        for e in read_events(reader) {
            events.push(e.map_err(|e| match e {
                LogError::Malformed { line, reason } => StoreError::CorruptLog {
                    position: line,
                    reason,
                },
                other => StoreError::StorageFailure(other),
            })?);
        }
        let before = self.state.position;
        let mut probe = self.state.clone();
        for (i, e) in events.iter().enumerate() {
            probe.apply(e).map_err(|v| StoreError::CorruptLog {
                position: i as u64 + 1,
                reason: v.to_string(),
            })?;
        }
        drop(probe);
        let n = events.len() as u64;
        self.append(events)?;
        debug_assert_eq!(self.state.position - before, n);
        Ok(n)
    }

    pub fn write_snapshot(&self) -> Result<(), StoreError> {
        Ok(self.log.write_snapshot(&self.state)?)
    }

    pub fn search(
        &self,
        query: &str,
        k: usize,
        as_of: Option<Timestamp>,
        utility: impl Fn(TraceId) -> f64,
    ) -> Result<Vec<SearchHit>, StoreError> {
        let q = self.embedder.embed(query)?;
        Ok(self.rank(&q, k, as_of, utility))
    }

    pub fn rank(
        &self,
        query: &EmbeddingVector,
        k: usize,
        as_of: Option<Timestamp>,
        utility: impl Fn(TraceId) -> f64,
    ) -> Vec<SearchHit> {
        if k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<(Candidate, f64)> = self
            .index
            .scan(query, as_of)
            .into_iter()
            .map(|c| {
                let u = utility(c.trace_id);
                (c, u)
            })
            .collect();
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank_order);
            scored.truncate(k);
        }
        scored.sort_by(rank_order);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (c, u))| SearchHit {
                trace_id: c.trace_id,
                version_id: c.version_id,
                similarity: c.similarity,
                utility: u,
                rank: i + 1,
            })
            .collect()
    }

    pub fn lineage(&self, trace_id: TraceId) -> Result<Lineage, StoreError> {
        let rec = self
            .state
            .trace(trace_id)
            .ok_or(StoreError::UnknownTrace(trace_id))?;
        let versions: Vec<RationaleVersion> = self
            .state
            .chain(rec)
            .into_iter()
            .map(|v| v.version.clone())
            .collect();
        let mut nodes: Vec<NodeId> = vec![trace_id.into()];
        nodes.extend(rec.versions.iter().map(|v| NodeId::from(*v)));
        let mut edges: Vec<LineageEdge> = nodes
            .into_iter()
            .flat_map(|n| self.state.edges_touching(n))
            .filter(|e| e.edge.relation != Relation::Supersedes)
            .map(|e| e.edge)
            .collect();
        edges.sort();
        edges.dedup();
        Ok(Lineage {
            trace_id,
            redacted: rec.is_redacted(),
            versions,
            derivations: edges,
            references: self
                .state
                .references_of(rec)
                .into_iter()
                .map(|r| r.reference.clone())
                .collect(),
            flags: self.state.flags_for(trace_id).cloned().collect(),
        })
    }
}
