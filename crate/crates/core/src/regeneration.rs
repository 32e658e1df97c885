//! Context regeneration: ranked bundles of past decisions with their
//! rationale lineage stitched in, and the reconstructability score over a
//! closed set of audit questions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::drift::{contextual_entropy, DriftReport, FlagStatus, ResolutionAction};
use crate::embedding::EmbeddingError;
use crate::model::{
    ActorRef, Alternative, ContextSignal, FlagId, MemoryTrace, RationaleVersion, Timestamp,
    TraceId, VersionId,
};
use crate::scoring::{coherence, CoherenceParams, ReviewStatus};
use crate::store::{Lineage, State, Store, TraceRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegenerationError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("audit question set is empty")]
    EmptyQuestionSet,
    #[error("unknown audit question `{0}`")]
    UnknownQuestion(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeNote {
    pub seq: u32,
    pub version_id: VersionId,
    pub author: ActorRef,
    pub created_at: Timestamp,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleItem {
    pub rank: usize,
    pub trace_id: TraceId,
    pub subject: String,
    pub actor: ActorRef,
    pub created_at: Timestamp,
    pub similarity: f64,
    pub utility: f64,
    pub coherence: f64,
    pub review: ReviewStatus,
    /// Head version as of the bundle's reference time.
    pub head: RationaleVersion,
    pub original: RationaleVersion,
    /// Notes of every version after the first, up to the head.
    pub change_notes: Vec<ChangeNote>,
    pub alternatives: Vec<Alternative>,
    pub assumptions: Vec<String>,
    pub signals: Vec<ContextSignal>,
    pub links: Vec<String>,
    pub lineage_depth: u32,
    /// Flags open at the reference time, shown as they stood then.
    pub open_flags: Vec<DriftReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub query: String,
    pub as_of: Option<Timestamp>,
    pub items: Vec<BundleItem>,
    /// Entropy of the items' coherence weights; absent for an empty bundle.
    pub entropy_at_assembly: Option<f64>,
    /// Reference time: `as_of`, or the time of the last committed event.
    pub assembled_at: Timestamp,
}

impl ContextBundle {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }
}

/// Review status of a trace as it stood at `at`, from the resolutions
/// recorded up to then.
pub fn review_status_at(state: &State, trace_id: TraceId, at: Timestamp) -> ReviewStatus {
    state
        .flags_for(trace_id)
        .filter_map(|f| f.resolution.as_ref())
        .filter(|r| r.resolved_at <= at)
        .max_by_key(|r| r.resolved_at)
        .map_or(ReviewStatus::Unreviewed, |r| match r.action {
            ResolutionAction::Accepted | ResolutionAction::Revised => ReviewStatus::Confirmed,
            ResolutionAction::Retired => ReviewStatus::Retired,
        })
}

/// The report as it stood at `at`: a resolution recorded later is hidden.
fn flag_as_of(report: &DriftReport, at: Timestamp) -> DriftReport {
    let mut r = report.clone();
    if r.status_at(at) == FlagStatus::Open {
        r.status = FlagStatus::Open;
        r.resolution = None;
    }
    r
}

fn stitch(
    store: &Store,
    rec: &TraceRecord,
    head: &RationaleVersion,
    at: Timestamp,
    live: bool,
) -> (RationaleVersion, Vec<ChangeNote>, Vec<DriftReport>) {
    let state = store.state();
    let chain = state.chain(rec);
    let original = chain[0].version.clone();
    let change_notes = chain
        .iter()
        .map(|e| &e.version)
        .filter(|v| v.seq > 1 && v.seq <= head.seq)
        .map(|v| ChangeNote {
            seq: v.seq,
            version_id: v.version_id,
            author: v.author.clone(),
            created_at: v.created_at,
            note: v.change_note.clone(),
        })
        .collect();
    let open_flags = state
        .flags_for(rec.trace.trace_id)
        .filter(|f| if live { f.status.is_open() } else { f.is_open_at(at) })
        .map(|f| if live { f.clone() } else { flag_as_of(f, at) })
        .collect();
    (original, change_notes, open_flags)
}

/// Top-`k` traces for `query` as of `as_of`, each with its lineage stitched
/// in. The output depends only on the store state and the arguments.
pub fn regenerate(
    store: &Store,
    query: &str,
    as_of: Option<Timestamp>,
    k: usize,
    utility: impl Fn(TraceId) -> f64,
    params: &CoherenceParams,
) -> Result<ContextBundle, RegenerationError> {
    if k == 0 {
        return Err(RegenerationError::InvalidK);
    }
    let state = store.state();
    let at = as_of.or(state.last_event_at).unwrap_or(Timestamp(0));
    let live = as_of.is_none();
    let hits = store.search(query, k, as_of, utility).map_err(|e| match e {
        crate::store::StoreError::Embedding(e) => RegenerationError::Embedding(e),
        other => unreachable!("search only fails on embedding: {other}"),
    })?;

    let mut items = Vec::with_capacity(hits.len());
    for hit in hits {
        let rec = &state.traces[&hit.trace_id];
        let head = state.versions[&hit.version_id].version.clone();
        let (original, change_notes, open_flags) = stitch(store, rec, &head, at, live);
        let review = if live { rec.review } else { review_status_at(state, hit.trace_id, at) };
        let t = &rec.trace;
        items.push(BundleItem {
            rank: hit.rank,
            trace_id: hit.trace_id,
            subject: t.subject.clone(),
            actor: t.actor.clone(),
            created_at: t.created_at,
            similarity: hit.similarity,
            utility: hit.utility,
            coherence: coherence(t.created_at, review, at, params),
            review,
            lineage_depth: head.seq,
            head,
            original,
            change_notes,
            alternatives: t.alternatives.clone(),
            assumptions: t.assumptions.clone(),
            signals: t.signals.clone(),
            links: t.links.clone(),
            open_flags,
        });
    }
    let weights: Vec<f64> = items.iter().map(|i| i.coherence).collect();
    let entropy_at_assembly = if weights.is_empty() {
        None
    } else {
        contextual_entropy(&weights).ok()
    };
    Ok(ContextBundle {
        query: query.to_string(),
        as_of,
        items,
        entropy_at_assembly,
        assembled_at: at,
    })
}

// ---- reconstructability -----------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditQuestion {
    HasRationale,
    HasAlternatives,
    HasAssumptions,
    HasActor,
    HasLineage,
    HasFlagHistory,
}

impl AuditQuestion {
    pub const ALL: [AuditQuestion; 6] = [
        AuditQuestion::HasRationale,
        AuditQuestion::HasAlternatives,
        AuditQuestion::HasAssumptions,
        AuditQuestion::HasActor,
        AuditQuestion::HasLineage,
        AuditQuestion::HasFlagHistory,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AuditQuestion::HasRationale => "has_rationale",
            AuditQuestion::HasAlternatives => "has_alternatives",
            AuditQuestion::HasAssumptions => "has_assumptions",
            AuditQuestion::HasActor => "has_actor",
            AuditQuestion::HasLineage => "has_lineage",
            AuditQuestion::HasFlagHistory => "has_flag_history",
        }
    }
}

impl fmt::Display for AuditQuestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuditQuestion {
    type Err = RegenerationError;

    /// Accepts the bare name with or without a trailing `?`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.strip_suffix('?').unwrap_or(s);
        AuditQuestion::ALL
            .into_iter()
            .find(|q| q.as_str() == name)
            .ok_or_else(|| RegenerationError::UnknownQuestion(s.to_string()))
    }
}

/// What survives of one decision's context. A `None` field was not
/// retained, so the matching audit question cannot be answered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetainedContext {
    pub rationale: Option<String>,
    pub alternatives: Option<Vec<Alternative>>,
    pub assumptions: Option<Vec<String>>,
    pub actor: Option<ActorRef>,
    pub lineage: Option<Vec<VersionId>>,
    pub flag_history: Option<Vec<FlagId>>,
}

fn non_empty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

impl RetainedContext {
    /// Everything the store keeps about a trace. Empty captures (no
    /// alternatives, blank rationale) count as not retained.
    pub fn from_lineage(trace: &MemoryTrace, lineage: &Lineage) -> Self {
        let rationale = lineage
            .versions
            .last()
            .map(|v| v.rationale.clone())
            .filter(|r| !r.trim().is_empty());
        RetainedContext {
            rationale,
            alternatives: non_empty(&trace.alternatives),
            assumptions: non_empty(&trace.assumptions),
            actor: trace.actor.is_valid().then(|| trace.actor.clone()),
            lineage: non_empty(&lineage.versions.iter().map(|v| v.version_id).collect::<Vec<_>>()),
            flag_history: Some(lineage.flags.iter().map(|f| f.flag_id).collect()),
        }
    }

    pub fn from_item(item: &BundleItem) -> Self {
        let mut lineage = vec![item.original.version_id];
        lineage.extend(item.change_notes.iter().map(|c| c.version_id));
        RetainedContext {
            rationale: Some(item.head.rationale.clone()).filter(|r| !r.trim().is_empty()),
            alternatives: non_empty(&item.alternatives),
            assumptions: non_empty(&item.assumptions),
            actor: item.actor.is_valid().then(|| item.actor.clone()),
            lineage: Some(lineage),
            flag_history: Some(item.open_flags.iter().map(|f| f.flag_id).collect()),
        }
    }

    pub fn answers(&self, q: AuditQuestion) -> bool {
        match q {
            AuditQuestion::HasRationale => self.rationale.is_some(),
            AuditQuestion::HasAlternatives => self.alternatives.is_some(),
            AuditQuestion::HasAssumptions => self.assumptions.is_some(),
            AuditQuestion::HasActor => self.actor.is_some(),
            AuditQuestion::HasLineage => self.lineage.is_some(),
            AuditQuestion::HasFlagHistory => self.flag_history.is_some(),
        }
    }

    /// Elements still retained, in question order.
    pub fn retained(&self) -> Vec<AuditQuestion> {
        AuditQuestion::ALL.into_iter().filter(|q| self.answers(*q)).collect()
    }

    /// Drops the element that answers `q`.
    pub fn without(&self, q: AuditQuestion) -> Self {
        let mut c = self.clone();
        match q {
            AuditQuestion::HasRationale => c.rationale = None,
            AuditQuestion::HasAlternatives => c.alternatives = None,
            AuditQuestion::HasAssumptions => c.assumptions = None,
            AuditQuestion::HasActor => c.actor = None,
            AuditQuestion::HasLineage => c.lineage = None,
            AuditQuestion::HasFlagHistory => c.flag_history = None,
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructabilityScore {
    pub value: f64,
    pub answered: usize,
    pub total: usize,
}

/// Fraction of (decision, question) pairs answerable from the retained
/// subset alone. An empty subset still poses every question once, so it
/// scores 0.
pub fn reconstructability(
    subset: &[RetainedContext],
    questions: &[AuditQuestion],
) -> Result<ReconstructabilityScore, RegenerationError> {
    if questions.is_empty() {
        return Err(RegenerationError::EmptyQuestionSet);
    }
    let total = questions.len() * subset.len().max(1);
    let answered = subset
        .iter()
        .map(|c| questions.iter().filter(|q| c.answers(**q)).count())
        .sum::<usize>();
    Ok(ReconstructabilityScore {
        value: answered as f64 / total as f64,
        answered,
        total,
    })
}

/// Reconstructability of every decision in a bundle.
pub fn bundle_reconstructability(
    bundle: &ContextBundle,
    questions: &[AuditQuestion],
) -> Result<ReconstructabilityScore, RegenerationError> {
    let subset: Vec<RetainedContext> = bundle.items.iter().map(RetainedContext::from_item).collect();
    reconstructability(&subset, questions)
}
