use serde::{Deserialize, Serialize};

use super::ids::{Timestamp, TraceId, VersionId};
use super::trace::ActorRef;

/// Immutable node in a trace's rationale chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleVersion {
    pub version_id: VersionId,
    pub trace_id: TraceId,
    pub seq: u32,
    pub rationale: String,
    pub author: ActorRef,
    pub created_at: Timestamp,
    pub supersedes: Option<VersionId>,
    pub change_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("version {got} does not belong to trace {expected}")]
    WrongTrace { expected: TraceId, got: TraceId },
    #[error("expected seq {expected}, got {got}")]
    SeqGap { expected: u32, got: u32 },
    #[error("supersedes must name the previous head")]
    BrokenSupersedes,
    #[error("version created before its predecessor")]
    TimeReversal,
    #[error("version id does not sort after its predecessor")]
    IdOrder,
}

/// Builds the next version in a chain whose current head is `head`
/// (`None` for a trace without versions yet).
pub fn new_version(
    trace_id: TraceId,
    head: Option<&RationaleVersion>,
    version_id: VersionId,
    rationale: impl Into<String>,
    author: ActorRef,
    change_note: impl Into<String>,
    created_at: Timestamp,
) -> RationaleVersion {
    RationaleVersion {
        version_id,
        trace_id,
        seq: head.map_or(1, |h| h.seq + 1),
        rationale: rationale.into(),
        author,
        created_at,
        supersedes: head.map(|h| h.version_id),
        change_note: change_note.into(),
    }
}

impl RationaleVersion {
    /// Checks that `self` may be appended after `head` in `trace_id`'s chain.
    pub fn check_follows(
        &self,
        trace_id: TraceId,
        head: Option<&RationaleVersion>,
    ) -> Result<(), ChainError> {
        if self.trace_id != trace_id {
            return Err(ChainError::WrongTrace {
                expected: trace_id,
                got: self.trace_id,
            });
        }
        let expected = head.map_or(1, |h| h.seq + 1);
        if self.seq != expected {
            return Err(ChainError::SeqGap {
                expected,
                got: self.seq,
            });
        }
        if self.supersedes != head.map(|h| h.version_id) {
            return Err(ChainError::BrokenSupersedes);
        }
        if let Some(h) = head {
            if self.created_at < h.created_at {
                return Err(ChainError::TimeReversal);
            }
            if self.version_id <= h.version_id {
                return Err(ChainError::IdOrder);
            }
        }
        Ok(())
    }
}
