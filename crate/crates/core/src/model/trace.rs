use std::fmt;

use serde::{Deserialize, Serialize};

use super::ids::{Timestamp, TraceId};
use super::taxonomy::{ContextKind, ContextScope, ContextSource, ContextState};

pub const MAX_LABEL_CHARS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorRef {
    pub actor_id: String,
    pub role: String,
}

impl ActorRef {
    pub fn new(actor_id: impl Into<String>, role: impl Into<String>) -> Self {
        ActorRef {
            actor_id: actor_id.into(),
            role: role.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.actor_id.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSignal {
    pub kind: ContextKind,
    pub source: ContextSource,
    pub scope: ContextScope,
    pub state: ContextState,
    pub label: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alternative {
    pub option: String,
    pub reason_rejected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetentionPolicy {
    #[default]
    Default,
    Extended,
    Minimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Retention {
    pub policy: RetentionPolicy,
    pub redacted: bool,
}

/// One captured decision: its rationale, what was rejected and why, the
/// assumptions it rests on, and the situational signals around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub trace_id: TraceId,
    pub subject: String,
    pub rationale: String,
    pub alternatives: Vec<Alternative>,
    pub assumptions: Vec<String>,
    pub signals: Vec<ContextSignal>,
    pub actor: ActorRef,
    pub created_at: Timestamp,
    pub retention: Retention,
    /// Opaque external references; ids that name another trace become
    /// lineage edges when the trace is captured.
    pub links: Vec<String>,
}

/// Signal as submitted by a client. Dimensions are strings so a missing or
/// unknown value can be reported instead of failing the whole parse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSignal {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub scope: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub payload: String,
}

/// Unvalidated trace fields, the body of a capture request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<TraceId>,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
    #[serde(default)]
    pub assumptions: Vec<String>,
    #[serde(default)]
    pub signals: Vec<RawSignal>,
    #[serde(default)]
    pub actor: Option<ActorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<Timestamp>,
    #[serde(default)]
    pub retention: Retention,
    #[serde(default)]
    pub links: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationCode {
    EmptyRationale,
    MissingTaxonomyDimension,
    UnknownTaxonomyValue,
    InvalidLabel,
    FutureTimestamp,
    MissingActor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            code,
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Every invariant a candidate trace broke, in field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct ValidationErrors {
    pub violations: Vec<Violation>,
}

impl ValidationErrors {
    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{:?} at {}: {}", v.code, v.field, v.message))
            .collect();
        write!(f, "invalid trace: {}", parts.join("; "))
    }
}

fn parse_dimension<T>(
    value: &Option<String>,
    field: String,
    out: &mut Vec<Violation>,
) -> Option<T>
where
    T: std::str::FromStr<Err = super::taxonomy::UnknownTaxonomyValue>,
{
    match value.as_deref() {
        None => {
            out.push(Violation::new(
                ViolationCode::MissingTaxonomyDimension,
                field,
                "dimension is required",
            ));
            None
        }
        Some(s) => match s.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                out.push(Violation::new(
                    ViolationCode::UnknownTaxonomyValue,
                    field,
                    e.to_string(),
                ));
                None
            }
        },
    }
}

fn validate_signal(idx: usize, raw: &RawSignal, out: &mut Vec<Violation>) -> Option<ContextSignal> {
    let field = |name: &str| format!("signals[{idx}].{name}");
    let kind = parse_dimension::<ContextKind>(&raw.kind, field("kind"), out);
    let source = parse_dimension::<ContextSource>(&raw.source, field("source"), out);
    let scope = parse_dimension::<ContextScope>(&raw.scope, field("scope"), out);
    let state = parse_dimension::<ContextState>(&raw.state, field("state"), out);
    let label_chars = raw.label.chars().count();
    let label_ok = !raw.label.trim().is_empty() && label_chars <= MAX_LABEL_CHARS;
    if !label_ok {
        out.push(Violation::new(
            ViolationCode::InvalidLabel,
            field("label"),
            format!("label must be 1..={MAX_LABEL_CHARS} characters, got {label_chars}"),
        ));
    }
    Some(ContextSignal {
        kind: kind?,
        source: source?,
        scope: scope?,
        state: state?,
        label: if label_ok { raw.label.clone() } else { return None },
        payload: raw.payload.clone(),
    })
}

/// Checks a candidate against every trace invariant and either builds the
/// trace or returns the full list of violations.
///
/// `now` is the ingestion time; `fresh_id` is only consulted when the
/// candidate does not already carry an id.
pub fn validate_trace(
    raw: RawTrace,
    now: Timestamp,
    fresh_id: impl FnOnce() -> TraceId,
) -> Result<MemoryTrace, ValidationErrors> {
    let mut violations = Vec::new();

    if raw.rationale.trim().is_empty() && !raw.retention.redacted {
        violations.push(Violation::new(
            ViolationCode::EmptyRationale,
            "rationale",
            "rationale must be non-empty",
        ));
    }

    let signals: Vec<Option<ContextSignal>> = raw
        .signals
        .iter()
        .enumerate()
        .map(|(i, s)| validate_signal(i, s, &mut violations))
        .collect();

    let actor_ok = raw.actor.as_ref().is_some_and(ActorRef::is_valid);
    if !actor_ok {
        violations.push(Violation::new(
            ViolationCode::MissingActor,
            "actor.actor_id",
            "actor_id must be non-empty",
        ));
    }

    let created_at = raw.created_at.unwrap_or(now);
    if created_at > now {
        violations.push(Violation::new(
            ViolationCode::FutureTimestamp,
            "created_at",
            format!("created_at {created_at} is after ingestion time {now}"),
        ));
    }

    if !violations.is_empty() {
        return Err(ValidationErrors { violations });
    }

    Ok(MemoryTrace {
        trace_id: raw.trace_id.unwrap_or_else(fresh_id),
        subject: raw.subject,
        rationale: raw.rationale,
        alternatives: raw.alternatives,
        assumptions: raw.assumptions,
        signals: signals.into_iter().flatten().collect(),
        actor: raw.actor.expect("checked above"),
        created_at,
        retention: raw.retention,
        links: raw.links,
    })
}

impl From<&ContextSignal> for RawSignal {
    fn from(s: &ContextSignal) -> Self {
        RawSignal {
            kind: Some(s.kind.to_string()),
            source: Some(s.source.to_string()),
            scope: Some(s.scope.to_string()),
            state: Some(s.state.to_string()),
            label: s.label.clone(),
            payload: s.payload.clone(),
        }
    }
}

impl From<&MemoryTrace> for RawTrace {
    fn from(t: &MemoryTrace) -> Self {
        RawTrace {
            trace_id: Some(t.trace_id),
            subject: t.subject.clone(),
            rationale: t.rationale.clone(),
            alternatives: t.alternatives.clone(),
            assumptions: t.assumptions.clone(),
            signals: t.signals.iter().map(RawSignal::from).collect(),
            actor: Some(t.actor.clone()),
            created_at: Some(t.created_at),
            retention: t.retention,
            links: t.links.clone(),
        }
    }
}
