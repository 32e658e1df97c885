use std::fmt;

use serde::{Deserialize, Serialize};
use ulid::Ulid;

use crate::drift::{DriftReport, FlagResolution};
use crate::model::{
    ActorRef, EventId, FlagId, MemoryTrace, RationaleVersion, Timestamp, TraceId, VersionId,
};

/// Either a trace id or a version id; both share the ULID space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub Ulid);

impl From<TraceId> for NodeId {
    fn from(id: TraceId) -> Self {
        NodeId(id.0)
    }
}

impl From<VersionId> for NodeId {
    fn from(id: VersionId) -> Self {
        NodeId(id.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Supersedes,
    DerivedFrom,
    ReusedIn,
    LinksTo,
}

impl std::str::FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "supersedes" => Ok(Relation::Supersedes),
            "derived_from" => Ok(Relation::DerivedFrom),
            "reused_in" => Ok(Relation::ReusedIn),
            "links_to" => Ok(Relation::LinksTo),
            other => Err(format!("unknown relation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageEdge {
    pub from_id: NodeId,
    pub to_id: NodeId,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceCaptured {
    pub trace: MemoryTrace,
    pub version: RationaleVersion,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

/// (Re-)ingestion of an external reference document, such as a guideline.
/// Traces whose `links` name the reference depend on it; `linked_traces`
/// adds explicit dependents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceIngest {
    pub reference: String,
    pub content: String,
    #[serde(default)]
    pub linked_traces: Vec<TraceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkPayload {
    Edge(LineageEdge),
    Reference(ReferenceIngest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagResolved {
    pub flag_id: FlagId,
    pub resolution: FlagResolution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRedacted {
    pub trace_id: TraceId,
    pub actor: ActorRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecorded {
    pub trace_id: TraceId,
    pub endorsement: f64,
    pub actor: ActorRef,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReuseRecorded {
    pub trace_id: TraceId,
    pub reusing_trace_id: TraceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    TraceCaptured(Box<TraceCaptured>),
    VersionAdded(RationaleVersion),
    LinkAdded(LinkPayload),
    DriftFlagged(DriftReport),
    FlagResolved(FlagResolved),
    TraceRedacted(TraceRedacted),
    FeedbackRecorded(FeedbackRecorded),
    ReuseRecorded(ReuseRecorded),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TraceCaptured,
    VersionAdded,
    LinkAdded,
    DriftFlagged,
    FlagResolved,
    TraceRedacted,
    FeedbackRecorded,
    ReuseRecorded,
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::TraceCaptured(_) => EventKind::TraceCaptured,
            EventBody::VersionAdded(_) => EventKind::VersionAdded,
            EventBody::LinkAdded(_) => EventKind::LinkAdded,
            EventBody::DriftFlagged(_) => EventKind::DriftFlagged,
            EventBody::FlagResolved(_) => EventKind::FlagResolved,
            EventBody::TraceRedacted(_) => EventKind::TraceRedacted,
            EventBody::FeedbackRecorded(_) => EventKind::FeedbackRecorded,
            EventBody::ReuseRecorded(_) => EventKind::ReuseRecorded,
        }
    }
}

/// One line of the append-only log: `{"event_id", "at", "kind", "payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: EventId,
    pub at: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdGenerator;

    #[test]
    fn event_line_layout() {
        let mut gen = IdGenerator::seeded(5);
        let at = Timestamp(1_700_000_000_000);
        let ev = Event {
            event_id: EventId(gen.next(at)),
            at,
            body: EventBody::ReuseRecorded(ReuseRecorded {
                trace_id: TraceId(gen.next(at)),
                reusing_trace_id: TraceId(gen.next(at)),
            }),
        };
        let line = ev.to_json_line();
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["at", "event_id", "kind", "payload"]);
        assert_eq!(value["kind"], "reuse_recorded");
        assert_eq!(value["at"], 1_700_000_000_000i64);
        let back: Event = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ev);
    }

    #[test]
    fn kind_payload_mismatch_is_rejected() {
        let line = r#"{"event_id":"01ARZ3NDEKTSV4RRFFQ69G5FAV","at":1,"kind":"trace_redacted","payload":{"trace_id":"01ARZ3NDEKTSV4RRFFQ69G5FAV","reusing_trace_id":"01ARZ3NDEKTSV4RRFFQ69G5FAV"}}"#;
        assert!(serde_json::from_str::<Event>(line).is_err());
        let unknown = r#"{"event_id":"01ARZ3NDEKTSV4RRFFQ69G5FAV","at":1,"kind":"trace_exploded","payload":{}}"#;
        assert!(serde_json::from_str::<Event>(unknown).is_err());
    }

    #[test]
    fn link_payload_variants_are_distinguishable() {
        let edge: LinkPayload = serde_json::from_str(
            r#"{"from_id":"01ARZ3NDEKTSV4RRFFQ69G5FAV","to_id":"01ARZ3NDEKTSV4RRFFQ69G5FAW","relation":"derived_from"}"#,
        )
        .unwrap();
        assert!(matches!(edge, LinkPayload::Edge(_)));
        let reference: LinkPayload =
            serde_json::from_str(r#"{"reference":"guideline:htn","content":"first line: X"}"#).unwrap();
        assert!(matches!(reference, LinkPayload::Reference(_)));
    }
}
