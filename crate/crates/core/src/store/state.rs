//! Materialized engine state: the fold of every committed event.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::event::{
    Event, EventBody, FeedbackRecorded, FlagResolved, LineageEdge, LinkPayload, NodeId,
    ReferenceIngest, Relation, ReuseRecorded, TraceCaptured, TraceRedacted,
};
use crate::drift::{DriftCause, DriftReport, FlagStatus, ResolutionAction};
use crate::model::{
    validate_trace, ChainError, EventId, FlagId, MemoryTrace, RationaleVersion, RawTrace,
    Timestamp, TraceId, ValidationErrors, VersionId,
};
use crate::scoring::ReviewStatus;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaViolation {
    #[error("event id {0} does not sort after the previous event")]
    NonMonotonicEventId(EventId),
    #[error("event time {0} is before the previous event")]
    TimeReversal(Timestamp),
    #[error("unknown trace {0}")]
    UnknownTrace(TraceId),
    #[error("trace {0} already exists")]
    DuplicateTrace(TraceId),
    #[error("trace {0} is redacted")]
    TraceRedacted(TraceId),
    #[error("trace {0} is already redacted")]
    AlreadyRedacted(TraceId),
    #[error(transparent)]
    InvalidTrace(#[from] ValidationErrors),
    #[error("invalid version chain: {0}")]
    Chain(#[from] ChainError),
    #[error("version {0} already exists")]
    DuplicateVersion(VersionId),
    #[error("first version does not match the captured trace")]
    FirstVersionMismatch,
    #[error("unknown version {0}")]
    UnknownVersion(VersionId),
    #[error("unknown lineage node {0}")]
    UnknownNode(NodeId),
    #[error("self-edge on {0}")]
    SelfEdge(NodeId),
    #[error("edge would create a derivation cycle")]
    Cycle,
    #[error("edge already exists")]
    DuplicateEdge,
    #[error("supersedes edges are derived from version chains")]
    SupersedesNotAllowed,
    #[error("reference key must be non-empty")]
    EmptyReference,
    #[error("unknown flag {0}")]
    UnknownFlag(FlagId),
    #[error("flag {0} already exists")]
    DuplicateFlag(FlagId),
    #[error("an equivalent drift report already exists")]
    DuplicateReport,
    #[error("flag {0} is already resolved")]
    FlagAlreadyResolved(FlagId),
    #[error("invalid drift report: {0}")]
    InvalidReport(String),
    #[error("revised resolution requires the new version")]
    MissingRevisionPayload,
    #[error("only revised resolutions carry a version")]
    UnexpectedRevision,
    #[error("idempotency key `{0}` already used")]
    DuplicateIdempotencyKey(String),
    #[error("a trace cannot reuse itself")]
    SelfReuse,
    #[error("endorsement {0} outside [0, 1]")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace: MemoryTrace,
    /// Event time of capture; the trace exists for as-of queries from here.
    pub recorded_at: Timestamp,
    /// Version ids in seq order.
    pub versions: Vec<VersionId>,
    pub reuse_count: u64,
    pub feedback_sum: f64,
    pub feedback_count: u64,
    pub review: ReviewStatus,
    /// Latest version a reviewer signed off on; drift is measured from here.
    pub reviewed_version: Option<VersionId>,
    /// Reference revision each linked document was last acknowledged at.
    pub acknowledged_refs: BTreeMap<String, u32>,
    pub explicit_refs: BTreeSet<String>,
    pub redacted_at: Option<Timestamp>,
    pub idempotency_key: Option<String>,
}

impl TraceRecord {
    pub fn is_redacted(&self) -> bool {
        self.trace.retention.redacted
    }

    pub fn feedback_mean(&self) -> Option<f64> {
        (self.feedback_count > 0).then(|| self.feedback_sum / self.feedback_count as f64)
    }

    pub fn head(&self) -> VersionId {
        *self.versions.last().expect("every trace has a first version")
    }

    pub fn original(&self) -> VersionId {
        self.versions[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub version: RationaleVersion,
    pub recorded_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub edge: LineageEdge,
    pub recorded_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRevision {
    pub revision: u32,
    pub content: String,
    pub recorded_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub reference: String,
    pub revisions: Vec<ReferenceRevision>,
}

impl ReferenceRecord {
    pub fn head(&self) -> &ReferenceRevision {
        self.revisions.last().expect("references hold at least one revision")
    }

    pub fn revision(&self, n: u32) -> Option<&ReferenceRevision> {
        self.revisions.get((n as usize).checked_sub(1)?)
    }

    /// Latest revision recorded at or before `t`.
    pub fn as_of(&self, t: Timestamp) -> Option<&ReferenceRevision> {
        self.revisions.iter().rev().find(|r| r.recorded_at <= t)
    }
}

/// Fold of the event log. The serialized form is the snapshot document and
/// the input to the canonical state hash; lookup indexes are rebuilt from it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct State {
    pub position: u64,
    pub last_event_id: Option<EventId>,
    pub last_event_at: Option<Timestamp>,
    pub traces: BTreeMap<TraceId, TraceRecord>,
    pub versions: BTreeMap<VersionId, VersionEntry>,
    pub edges: Vec<EdgeEntry>,
    pub flags: BTreeMap<FlagId, DriftReport>,
    pub references: BTreeMap<String, ReferenceRecord>,

    #[serde(skip)]
    idempotency: HashMap<String, TraceId>,
    #[serde(skip)]
    edges_by_node: HashMap<NodeId, Vec<usize>>,
    #[serde(skip)]
    edge_set: HashSet<LineageEdge>,
    #[serde(skip)]
    flags_by_trace: HashMap<TraceId, Vec<FlagId>>,
    #[serde(skip)]
    flag_keys: HashSet<String>,
}

impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_json() == other.canonical_json()
    }
}

impl State {
    pub fn new() -> Self {
        State::default()
    }

    /// Restores a snapshot document and rebuilds the lookup indexes.
    pub fn from_snapshot_json(json: &str) -> serde_json::Result<Self> {
        let mut state: State = serde_json::from_str(json)?;
        state.rebuild_indexes();
        Ok(state)
    }

    fn rebuild_indexes(&mut self) {
        self.idempotency = self
            .traces
            .values()
            .filter_map(|r| r.idempotency_key.clone().map(|k| (k, r.trace.trace_id)))
            .collect();
        self.edges_by_node.clear();
        self.edge_set.clear();
        let edges: Vec<LineageEdge> = self.edges.iter().map(|e| e.edge).collect();
        for (i, e) in edges.into_iter().enumerate() {
            self.index_edge(i, e);
        }
        self.flags_by_trace.clear();
        self.flag_keys.clear();
        for f in self.flags.values() {
            self.flags_by_trace.entry(f.trace_id).or_default().push(f.flag_id);
            self.flag_keys.insert(f.dedup_key());
        }
    }

    fn index_edge(&mut self, i: usize, edge: LineageEdge) {
        self.edges_by_node.entry(edge.from_id).or_default().push(i);
        self.edges_by_node.entry(edge.to_id).or_default().push(i);
        self.edge_set.insert(edge);
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn state_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn is_empty(&self) -> bool {
        self.position == 0
    }

    // ---- lookups -------------------------------------------------------

    pub fn trace(&self, id: TraceId) -> Option<&TraceRecord> {
        self.traces.get(&id)
    }

    /// A trace that exists and has not been redacted.
    pub fn live_trace(&self, id: TraceId) -> Result<&TraceRecord, SchemaViolation> {
        match self.traces.get(&id) {
            None => Err(SchemaViolation::UnknownTrace(id)),
            Some(r) if r.is_redacted() => Err(SchemaViolation::TraceRedacted(id)),
            Some(r) => Ok(r),
        }
    }

    pub fn version(&self, id: VersionId) -> Option<&VersionEntry> {
        self.versions.get(&id)
    }

    pub fn trace_by_idempotency_key(&self, key: &str) -> Option<TraceId> {
        self.idempotency.get(key).copied()
    }

    pub fn chain(&self, trace: &TraceRecord) -> Vec<&VersionEntry> {
        trace.versions.iter().map(|v| &self.versions[v]).collect()
    }

    /// Head version as of event time `at` (`None` = now).
    pub fn head_as_of(&self, trace: &TraceRecord, at: Option<Timestamp>) -> Option<&VersionEntry> {
        let at = match at {
            None => return self.versions.get(&trace.head()),
            Some(t) => t,
        };
        trace
            .versions
            .iter()
            .rev()
            .map(|v| &self.versions[v])
            .find(|v| v.recorded_at <= at)
    }

    pub fn edges_touching(&self, node: NodeId) -> impl Iterator<Item = &EdgeEntry> {
        self.edges_by_node
            .get(&node)
            .into_iter()
            .flatten()
            .map(|i| &self.edges[*i])
    }

    pub fn flags_for(&self, trace_id: TraceId) -> impl Iterator<Item = &DriftReport> {
        self.flags_by_trace
            .get(&trace_id)
            .into_iter()
            .flatten()
            .map(|f| &self.flags[f])
    }

    pub fn has_equivalent_flag(&self, report: &DriftReport) -> bool {
        self.flag_keys.contains(&report.dedup_key())
    }

    /// Reference documents the trace depends on: its `links` that name an
    /// ingested reference, plus explicit links.
    pub fn references_of<'a>(&'a self, trace: &'a TraceRecord) -> Vec<&'a ReferenceRecord> {
        let mut keys: BTreeSet<&str> = trace.explicit_refs.iter().map(String::as_str).collect();
        keys.extend(
            trace
                .trace
                .links
                .iter()
                .map(String::as_str)
                .filter(|k| self.references.contains_key(*k)),
        );
        keys.into_iter().map(|k| &self.references[k]).collect()
    }

    /// Traces that would be affected by a change to `reference`.
    pub fn dependents_of(&self, reference: &str) -> Vec<TraceId> {
        self.traces
            .values()
            .filter(|r| {
                r.explicit_refs.contains(reference) || r.trace.links.iter().any(|l| l == reference)
            })
            .map(|r| r.trace.trace_id)
            .collect()
    }

    fn node_exists(&self, node: NodeId) -> bool {
        self.traces.contains_key(&TraceId(node.0)) || self.versions.contains_key(&VersionId(node.0))
    }

    /// Whether `to` reaches `from` along derived_from edges.
    fn derivation_path(&self, start: NodeId, target: NodeId) -> bool {
        let mut stack = vec![start];
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if !seen.insert(n) {
                continue;
            }
            for e in self.edges_touching(n) {
                if e.edge.relation == Relation::DerivedFrom && e.edge.from_id == n {
                    stack.push(e.edge.to_id);
                }
            }
        }
        false
    }

    // ---- fold ----------------------------------------------------------

    /// Validates `event` against the current state and folds it in. On error
    /// the state is unchanged.
    pub fn apply(&mut self, event: &Event) -> Result<(), SchemaViolation> {
        self.validate(event)?;
        self.mutate(event);
        self.position += 1;
        self.last_event_id = Some(event.event_id);
        self.last_event_at = Some(event.at);
        Ok(())
    }

    fn validate(&self, event: &Event) -> Result<(), SchemaViolation> {
        if self.last_event_id.is_some_and(|last| event.event_id <= last) {
            return Err(SchemaViolation::NonMonotonicEventId(event.event_id));
        }
        if self.last_event_at.is_some_and(|last| event.at < last) {
            return Err(SchemaViolation::TimeReversal(event.at));
        }
        match &event.body {
            EventBody::TraceCaptured(c) => self.validate_capture(c, event.at),
            EventBody::VersionAdded(v) => {
                let record = self.live_trace(v.trace_id)?;
                if self.versions.contains_key(&v.version_id) {
                    return Err(SchemaViolation::DuplicateVersion(v.version_id));
                }
                let head = &self.versions[&record.head()].version;
                v.check_follows(v.trace_id, Some(head))?;
                if v.created_at > event.at {
                    return Err(ChainError::TimeReversal.into());
                }
                Ok(())
            }
            EventBody::LinkAdded(LinkPayload::Edge(edge)) => self.validate_edge(edge),
            EventBody::LinkAdded(LinkPayload::Reference(r)) => {
                if r.reference.trim().is_empty() {
                    return Err(SchemaViolation::EmptyReference);
                }
                for t in &r.linked_traces {
                    self.live_trace(*t)?;
                }
                Ok(())
            }
            EventBody::DriftFlagged(report) => self.validate_report(report, event.at),
            EventBody::FlagResolved(r) => self.validate_resolution(r, event.at),
            EventBody::TraceRedacted(r) => match self.traces.get(&r.trace_id) {
                None => Err(SchemaViolation::UnknownTrace(r.trace_id)),
                Some(t) if t.is_redacted() => Err(SchemaViolation::AlreadyRedacted(r.trace_id)),
                Some(_) => Ok(()),
            },
            EventBody::FeedbackRecorded(f) => {
                self.live_trace(f.trace_id)?;
                if !(f.endorsement.is_finite() && (0.0..=1.0).contains(&f.endorsement)) {
                    return Err(SchemaViolation::OutOfRange(f.endorsement));
                }
                Ok(())
            }
            EventBody::ReuseRecorded(r) => {
                if r.trace_id == r.reusing_trace_id {
                    return Err(SchemaViolation::SelfReuse);
                }
                self.live_trace(r.trace_id)?;
                self.live_trace(r.reusing_trace_id)?;
                Ok(())
            }
        }
    }

    fn validate_capture(&self, c: &TraceCaptured, at: Timestamp) -> Result<(), SchemaViolation> {
        let id = c.trace.trace_id;
        if self.traces.contains_key(&id) {
            return Err(SchemaViolation::DuplicateTrace(id));
        }
        validate_trace(RawTrace::from(&c.trace), at, || id)?;
        if self.versions.contains_key(&c.version.version_id) {
            return Err(SchemaViolation::DuplicateVersion(c.version.version_id));
        }
        c.version.check_follows(id, None)?;
        if c.version.rationale != c.trace.rationale || c.version.created_at != c.trace.created_at {
            return Err(SchemaViolation::FirstVersionMismatch);
        }
        if let Some(key) = &c.idempotency_key {
            if self.idempotency.contains_key(key) {
                return Err(SchemaViolation::DuplicateIdempotencyKey(key.clone()));
            }
        }
        Ok(())
    }

    fn validate_edge(&self, edge: &LineageEdge) -> Result<(), SchemaViolation> {
        if edge.relation == Relation::Supersedes {
            return Err(SchemaViolation::SupersedesNotAllowed);
        }
        if edge.from_id == edge.to_id {
            return Err(SchemaViolation::SelfEdge(edge.from_id));
        }
        for n in [edge.from_id, edge.to_id] {
            if !self.node_exists(n) {
                return Err(SchemaViolation::UnknownNode(n));
            }
        }
        if self.edge_set.contains(edge) {
            return Err(SchemaViolation::DuplicateEdge);
        }
        if edge.relation == Relation::DerivedFrom && self.derivation_path(edge.to_id, edge.from_id) {
            return Err(SchemaViolation::Cycle);
        }
        Ok(())
    }

    fn validate_report(&self, report: &DriftReport, at: Timestamp) -> Result<(), SchemaViolation> {
        let invalid = |m: &str| Err(SchemaViolation::InvalidReport(m.to_string()));
        if self.flags.contains_key(&report.flag_id) {
            return Err(SchemaViolation::DuplicateFlag(report.flag_id));
        }
        let trace = self.live_trace(report.trace_id)?;
        if report.status != FlagStatus::Open || report.resolution.is_some() {
            return invalid("new reports must be open");
        }
        if !(report.drift.is_finite() && (0.0..=2.0).contains(&report.drift)) {
            return invalid("drift outside [0, 2]");
        }
        if report.created_at > at {
            return invalid("created_at after event time");
        }
        if !trace.versions.contains(&report.original_version) {
            return Err(SchemaViolation::UnknownVersion(report.original_version));
        }
        match (&report.current_version, &report.external_context) {
            (Some(v), None) => {
                if !trace.versions.contains(v) {
                    return Err(SchemaViolation::UnknownVersion(*v));
                }
            }
            (None, Some(_)) => {}
            _ => return invalid("exactly one of current_version and external_context"),
        }
        match (&report.cause, &report.reference) {
            (DriftCause::ReferenceUpdate | DriftCause::DegenerateEmbedding, Some(mark)) => {
                let Some(doc) = self.references.get(&mark.reference) else {
                    return invalid("unknown reference");
                };
                if doc.revision(mark.baseline_revision).is_none()
                    || doc.revision(mark.current_revision).is_none()
                {
                    return invalid("unknown reference revision");
                }
            }
            (DriftCause::ReferenceUpdate, None) => return invalid("reference update without reference"),
            (_, Some(_)) => return invalid("reference mark on a non-reference report"),
            _ => {}
        }
        if self.has_equivalent_flag(report) {
            return Err(SchemaViolation::DuplicateReport);
        }
        Ok(())
    }

    fn validate_resolution(&self, r: &FlagResolved, at: Timestamp) -> Result<(), SchemaViolation> {
        let flag = self
            .flags
            .get(&r.flag_id)
            .ok_or(SchemaViolation::UnknownFlag(r.flag_id))?;
        if !flag.status.can_transition_to(r.resolution.action.into()) {
            return Err(SchemaViolation::FlagAlreadyResolved(r.flag_id));
        }
        if r.resolution.resolved_at > at {
            return Err(SchemaViolation::InvalidReport("resolved_at after event time".into()));
        }
        match (r.resolution.action, r.resolution.revision) {
            (ResolutionAction::Revised, None) => Err(SchemaViolation::MissingRevisionPayload),
            (ResolutionAction::Revised, Some(v)) => {
                let trace = self
                    .traces
                    .get(&flag.trace_id)
                    .ok_or(SchemaViolation::UnknownTrace(flag.trace_id))?;
                if trace.head() != v {
                    return Err(SchemaViolation::UnknownVersion(v));
                }
                Ok(())
            }
            (_, Some(_)) => Err(SchemaViolation::UnexpectedRevision),
            (_, None) => Ok(()),
        }
    }

    fn push_edge(&mut self, edge: LineageEdge, at: Timestamp) {
        if self.edge_set.contains(&edge) {
            return;
        }
        let i = self.edges.len();
        self.edges.push(EdgeEntry {
            edge,
            recorded_at: at,
        });
        self.index_edge(i, edge);
    }

    fn mutate(&mut self, event: &Event) {
        let at = event.at;
        match &event.body {
            EventBody::TraceCaptured(c) => self.capture(c, at),
            EventBody::VersionAdded(v) => {
                let head = self.traces[&v.trace_id].head();
                self.traces
                    .get_mut(&v.trace_id)
                    .expect("validated")
                    .versions
                    .push(v.version_id);
                self.versions.insert(
                    v.version_id,
                    VersionEntry {
                        version: v.clone(),
                        recorded_at: at,
                    },
                );
                self.push_edge(
                    LineageEdge {
                        from_id: v.version_id.into(),
                        to_id: head.into(),
                        relation: Relation::Supersedes,
                    },
                    at,
                );
            }
            EventBody::LinkAdded(LinkPayload::Edge(edge)) => self.push_edge(*edge, at),
            EventBody::LinkAdded(LinkPayload::Reference(r)) => self.ingest_reference(r, at),
            EventBody::DriftFlagged(report) => {
                self.flags_by_trace
                    .entry(report.trace_id)
                    .or_default()
                    .push(report.flag_id);
                self.flag_keys.insert(report.dedup_key());
                self.flags.insert(report.flag_id, report.clone());
            }
            EventBody::FlagResolved(r) => self.resolve(r),
            EventBody::TraceRedacted(r) => self.redact(r, at),
            EventBody::FeedbackRecorded(FeedbackRecorded {
                trace_id,
                endorsement,
                ..
            }) => {
                let rec = self.traces.get_mut(trace_id).expect("validated");
                rec.feedback_sum += endorsement;
                rec.feedback_count += 1;
            }
            EventBody::ReuseRecorded(ReuseRecorded {
                trace_id,
                reusing_trace_id,
            }) => {
                self.traces.get_mut(trace_id).expect("validated").reuse_count += 1;
                self.push_edge(
                    LineageEdge {
                        from_id: (*trace_id).into(),
                        to_id: (*reusing_trace_id).into(),
                        relation: Relation::ReusedIn,
                    },
                    at,
                );
            }
        }
    }

    fn capture(&mut self, c: &TraceCaptured, at: Timestamp) {
        let id = c.trace.trace_id;
        if let Some(key) = &c.idempotency_key {
            self.idempotency.insert(key.clone(), id);
        }
        self.versions.insert(
            c.version.version_id,
            VersionEntry {
                version: c.version.clone(),
                recorded_at: at,
            },
        );
        let linked: Vec<TraceId> = c
            .trace
            .links
            .iter()
            .filter_map(|l| l.parse::<TraceId>().ok())
            .filter(|t| *t != id && self.traces.contains_key(t))
            .collect();
        self.traces.insert(
            id,
            TraceRecord {
                trace: c.trace.clone(),
                recorded_at: at,
                versions: vec![c.version.version_id],
                reuse_count: 0,
                feedback_sum: 0.0,
                feedback_count: 0,
                review: ReviewStatus::Unreviewed,
                reviewed_version: None,
                acknowledged_refs: BTreeMap::new(),
                explicit_refs: BTreeSet::new(),
                redacted_at: None,
                idempotency_key: c.idempotency_key.clone(),
            },
        );
        for target in linked {
            self.push_edge(
                LineageEdge {
                    from_id: id.into(),
                    to_id: target.into(),
                    relation: Relation::LinksTo,
                },
                at,
            );
        }
    }

    fn ingest_reference(&mut self, r: &ReferenceIngest, at: Timestamp) {
        let doc = self
            .references
            .entry(r.reference.clone())
            .or_insert_with(|| ReferenceRecord {
                reference: r.reference.clone(),
                revisions: Vec::new(),
            });
        let revision = doc.revisions.len() as u32 + 1;
        doc.revisions.push(ReferenceRevision {
            revision,
            content: r.content.clone(),
            recorded_at: at,
        });
        for t in &r.linked_traces {
            self.traces
                .get_mut(t)
                .expect("validated")
                .explicit_refs
                .insert(r.reference.clone());
        }
    }

    fn resolve(&mut self, r: &FlagResolved) {
        let flag = self.flags.get_mut(&r.flag_id).expect("validated");
        flag.status = r.resolution.action.into();
        flag.resolution = Some(r.resolution.clone());
        let flag = flag.clone();
        let trace = self.traces.get_mut(&flag.trace_id).expect("validated");
        trace.review = match r.resolution.action {
            ResolutionAction::Accepted | ResolutionAction::Revised => ReviewStatus::Confirmed,
            ResolutionAction::Retired => ReviewStatus::Retired,
        };
        if let Some(mark) = &flag.reference {
            trace
                .acknowledged_refs
                .insert(mark.reference.clone(), mark.current_revision);
        }
        match (r.resolution.action, flag.cause) {
            (ResolutionAction::Revised, _) => trace.reviewed_version = r.resolution.revision,
            (
                ResolutionAction::Accepted,
                DriftCause::ReuseDivergence | DriftCause::DegenerateEmbedding,
            ) => trace.reviewed_version = flag.current_version,
            _ => {}
        }
    }

    fn redact(&mut self, r: &TraceRedacted, at: Timestamp) {
        let rec = self.traces.get_mut(&r.trace_id).expect("validated");
        let t = &mut rec.trace;
        t.retention.redacted = true;
        t.subject.clear();
        t.rationale.clear();
        t.alternatives.clear();
        t.assumptions.clear();
        t.signals.clear();
        t.links.clear();
        rec.explicit_refs.clear();
        rec.redacted_at = Some(at);
        for v in rec.versions.clone() {
            let entry = self.versions.get_mut(&v).expect("chain versions exist");
            entry.version.rationale.clear();
            entry.version.change_note.clear();
        }
    }
}
