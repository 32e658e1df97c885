//! Canonical data model: traces, the context taxonomy, rationale versions
//! and actors. Every type validates its invariants at construction and
//! serializes to the canonical JSON used on the wire and on disk.

mod ids;
mod taxonomy;
mod trace;
mod version;

pub use ids::{
    Clock, EventId, FlagId, IdGenerator, ManualClock, SystemClock, Timestamp, TraceId, VersionId,
};
pub use taxonomy::{ContextKind, ContextScope, ContextSource, ContextState, UnknownTaxonomyValue};
pub use trace::{
    validate_trace, ActorRef, Alternative, ContextSignal, MemoryTrace, RawSignal, RawTrace,
    Retention, RetentionPolicy, ValidationErrors, Violation, ViolationCode, MAX_LABEL_CHARS,
};
pub use version::{new_version, ChainError, RationaleVersion};
