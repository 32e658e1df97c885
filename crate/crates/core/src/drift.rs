//! Quantitative coherence constructs: contextual entropy over coherence
//! weights, insight drift between an original and a reinterpreted insight,
//! resonance of current reasoning against historical context, and
//! cross-modal alignment of two renderings. Also the drift report record
//! the monitor emits when a threshold is crossed.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingError, EmbeddingVector, TextEmbedder};
use crate::model::{ActorRef, FlagId, Timestamp, TraceId, VersionId};

pub const REFERENCE_UPDATE_MESSAGE: &str =
    "Past rationale based on outdated guideline. Review suggested.";
pub const REUSE_DIVERGENCE_MESSAGE: &str =
    "Current rationale diverges from the original insight. Review suggested.";
pub const CROSS_MODAL_MESSAGE: &str =
    "Rendering is misaligned with the recorded rationale. Review suggested.";
pub const DEGENERATE_MESSAGE: &str =
    "Rationale rendering has no embeddable content; drift cannot be scored. Review suggested.";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriftError {
    #[error("every coherence weight is zero")]
    AllCoherenceZero,
    #[error("coherence weight {0} is negative or not finite")]
    InvalidCoherence(f64),
    #[error("resonance needs at least one reference")]
    EmptyReferenceSet,
    #[error("every reference embedding is degenerate")]
    AllReferencesDegenerate,
    #[error("current reasoning embedding is degenerate")]
    DegenerateReasoning,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

/// Shannon entropy (nats) of coherence weights normalized to a distribution.
/// Zero weights contribute nothing.
pub fn contextual_entropy(coherence: &[f64]) -> Result<f64, DriftError> {
    if let Some(&bad) = coherence.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(DriftError::InvalidCoherence(bad));
    }
    let total: f64 = coherence.iter().sum();
    if total <= 0.0 {
        return Err(DriftError::AllCoherenceZero);
    }
    let h = coherence
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftScore {
    pub value: f64,
    /// One side had zero norm; `value` is pinned to 1.0.
    pub degenerate: bool,
}

/// Cosine distance between original and reinterpreted insight, in [0, 2].
pub fn insight_drift(
    original: &EmbeddingVector,
    reused: &EmbeddingVector,
) -> Result<DriftScore, EmbeddingError> {
    Ok(match cosine(original, reused)? {
        Some(c) => DriftScore {
            value: (1.0 - c).clamp(0.0, 2.0),
            degenerate: false,
        },
        None => DriftScore {
            value: 1.0,
            degenerate: true,
        },
    })
}

/// Mean cosine between the current reasoning and each reference. Degenerate
/// references are skipped and do not count towards the mean.
pub fn resonance(
    current: &EmbeddingVector,
    references: &[EmbeddingVector],
) -> Result<f64, DriftError> {
    if references.is_empty() {
        return Err(DriftError::EmptyReferenceSet);
    }
    if current.is_degenerate() {
        return Err(DriftError::DegenerateReasoning);
    }
    let mut sum = 0.0;
    let mut k = 0usize;
    for r in references {
        if let Some(c) = cosine(current, r)? {
            sum += c;
            k += 1;
        }
    }
    if k == 0 {
        return Err(DriftError::AllReferencesDegenerate);
    }
    Ok((sum / k as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `None` when either rendering embeds to the zero vector.
    pub score: Option<f64>,
    pub misaligned: bool,
}

pub fn cross_modal_alignment(
    embedder: &dyn TextEmbedder,
    rendering_a: &str,
    rendering_b: &str,
    tau_align: f64,
) -> Result<Alignment, EmbeddingError> {
    let a = embedder.embed(rendering_a)?;
    let b = embedder.embed(rendering_b)?;
    let score = cosine(&a, &b)?;
    Ok(Alignment {
        score,
        misaligned: score.is_none_or(|s| s < tau_align),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "Thresholds::default_drift")]
    pub tau_drift: f64,
    #[serde(default = "Thresholds::default_res")]
    pub tau_res: f64,
    #[serde(default = "Thresholds::default_align")]
    pub tau_align: f64,
}

impl Thresholds {
    fn default_drift() -> f64 {
        0.30
    }
    fn default_res() -> f64 {
        0.50
    }
    fn default_align() -> f64 {
        0.70
    }

    pub fn validate(&self) -> Result<(), DriftError> {
        let open = |x: f64, lo: f64, hi: f64| x > lo && x < hi;
        if !open(self.tau_drift, 0.0, 2.0) {
            return Err(DriftError::InvalidThresholds(format!(
                "tau_drift {} outside (0, 2)",
                self.tau_drift
            )));
        }
        for (name, v) in [("tau_res", self.tau_res), ("tau_align", self.tau_align)] {
            if !open(v, -1.0, 1.0) {
                return Err(DriftError::InvalidThresholds(format!("{name} {v} outside (-1, 1)")));
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_drift: Self::default_drift(),
            tau_res: Self::default_res(),
            tau_align: Self::default_align(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftCause {
    ReuseDivergence,
    ReferenceUpdate,
    CrossModal,
    DegenerateEmbedding,
}

impl DriftCause {
    pub fn message(&self) -> &'static str {
        match self {
            DriftCause::ReuseDivergence => REUSE_DIVERGENCE_MESSAGE,
            DriftCause::ReferenceUpdate => REFERENCE_UPDATE_MESSAGE,
            DriftCause::CrossModal => CROSS_MODAL_MESSAGE,
            DriftCause::DegenerateEmbedding => DEGENERATE_MESSAGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStatus {
    Open,
    Accepted,
    Revised,
    Retired,
}

impl FlagStatus {
    pub fn is_open(&self) -> bool {
        matches!(self, FlagStatus::Open)
    }

    /// Only open flags move, and only to a terminal status.
    pub fn can_transition_to(&self, next: FlagStatus) -> bool {
        self.is_open() && !next.is_open()
    }
}

impl std::str::FromStr for FlagStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(FlagStatus::Open),
            "accepted" => Ok(FlagStatus::Accepted),
            "revised" => Ok(FlagStatus::Revised),
            "retired" => Ok(FlagStatus::Retired),
            other => Err(format!("unknown flag status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionAction {
    Accepted,
    Revised,
    Retired,
}

impl From<ResolutionAction> for FlagStatus {
    fn from(a: ResolutionAction) -> Self {
        match a {
            ResolutionAction::Accepted => FlagStatus::Accepted,
            ResolutionAction::Revised => FlagStatus::Revised,
            ResolutionAction::Retired => FlagStatus::Retired,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagResolution {
    pub action: ResolutionAction,
    pub actor: ActorRef,
    pub note: String,
    pub resolved_at: Timestamp,
    /// Version created by a `revised` resolution.
    pub revision: Option<VersionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReferenceMark {
    pub reference: String,
    pub baseline_revision: u32,
    pub current_revision: u32,
}

/// A surfaced misalignment awaiting human review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub flag_id: FlagId,
    pub trace_id: TraceId,
    /// Set for reference updates: which document moved, and between which
    /// of its revisions.
    pub reference: Option<ReferenceMark>,
    pub original_version: VersionId,
    pub current_version: Option<VersionId>,
    pub external_context: Option<String>,
    pub drift: f64,
    pub cause: DriftCause,
    pub status: FlagStatus,
    pub message: String,
    pub created_at: Timestamp,
    pub resolution: Option<FlagResolution>,
}

impl DriftReport {
    /// Key that makes repeated scans idempotent: one report per compared pair.
    pub fn dedup_key(&self) -> String {
        serde_json::to_string(&(
            self.trace_id,
            self.cause,
            self.original_version,
            self.current_version,
            self.external_context.as_deref(),
            &self.reference,
        ))
        .expect("key parts serialize")
    }

    pub fn is_open_at(&self, at: Timestamp) -> bool {
        self.created_at <= at && self.resolution.as_ref().is_none_or(|r| r.resolved_at > at)
    }

    pub fn status_at(&self, at: Timestamp) -> FlagStatus {
        match &self.resolution {
            Some(r) if r.resolved_at <= at => r.action.into(),
            _ => FlagStatus::Open,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(contextual_entropy(&[0.7]).unwrap(), 0.0);
        let uniform = contextual_entropy(&[0.5; 4]).unwrap();
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        assert!((uniform - 1.386294).abs() < 1e-6);
        // -(0.9 ln 0.9 + 0.1 ln 0.1), evaluated independently
        assert!((contextual_entropy(&[0.9, 0.1]).unwrap() - 0.325083).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_contribute_nothing() {
        let with_zero = contextual_entropy(&[0.3, 0.0, 0.3]).unwrap();
        assert!((with_zero - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_errors() {
        assert_eq!(contextual_entropy(&[0.0, 0.0]), Err(DriftError::AllCoherenceZero));
        assert_eq!(contextual_entropy(&[]), Err(DriftError::AllCoherenceZero));
        assert_eq!(contextual_entropy(&[-0.1, 1.0]), Err(DriftError::InvalidCoherence(-0.1)));
    }

    #[test]
    fn drift_examples() {
        let e1 = v(&[1.0, 0.0]);
        assert_eq!(insight_drift(&e1, &e1).unwrap().value, 0.0);
        assert_eq!(insight_drift(&e1, &v(&[0.0, 1.0])).unwrap().value, 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let d = insight_drift(&e1, &v(&[h, h])).unwrap();
        assert!((d.value - (1.0 - 2f64.sqrt() / 2.0)).abs() < 1e-12);
        assert!((d.value - 0.292893).abs() < 1e-6);
        assert!((insight_drift(&e1, &v(&[-1.0, 0.0])).unwrap().value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_drift_is_pinned_and_marked() {
        let d = insight_drift(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(d, DriftScore { value: 1.0, degenerate: true });
    }

    #[test]
    fn resonance_examples() {
        let r = v(&[1.0, 0.0]);
        assert_eq!(resonance(&r, &[v(&[2.0, 0.0]), v(&[0.5, 0.0])]).unwrap(), 1.0);
        assert_eq!(resonance(&r, &[v(&[0.0, 1.0]), v(&[0.0, 3.0])]).unwrap(), 0.0);
        assert_eq!(resonance(&r, &[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap(), 0.5);
    }

    #[test]
    fn resonance_skips_degenerate_references() {
        let r = v(&[1.0, 0.0]);
        assert_eq!(resonance(&r, &[v(&[0.0, 0.0]), v(&[1.0, 0.0])]).unwrap(), 1.0);
        assert_eq!(resonance(&r, &[v(&[0.0, 0.0])]), Err(DriftError::AllReferencesDegenerate));
        assert_eq!(resonance(&r, &[]), Err(DriftError::EmptyReferenceSet));
    }

    #[test]
    fn alignment_examples() {
        let h = HashEmbedder::default();
        let same = cross_modal_alignment(&h, "dose reduced", "dose reduced", 0.7).unwrap();
        assert_eq!(same, Alignment { score: Some(1.0), misaligned: false });
        let empty = cross_modal_alignment(&h, "dose reduced", "", 0.7).unwrap();
        assert_eq!(empty, Alignment { score: None, misaligned: true });
    }

    #[test]
    fn threshold_ranges() {
        assert!(Thresholds::default().validate().is_ok());
        assert!(Thresholds { tau_drift: 2.0, ..Default::default() }.validate().is_err());
        assert!(Thresholds { tau_res: -1.0, ..Default::default() }.validate().is_err());
        assert!(Thresholds { tau_align: 0.99, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn status_transitions() {
        assert!(FlagStatus::Open.can_transition_to(FlagStatus::Accepted));
        assert!(!FlagStatus::Open.can_transition_to(FlagStatus::Open));
        assert!(!FlagStatus::Accepted.can_transition_to(FlagStatus::Retired));
    }

    proptest! {
        #[test]
        fn entropy_invariants(
            weights in proptest::collection::vec(0.001f64..1.0, 1..24),
            k in 0.01f64..100.0,
            rot in 0usize..24,
        ) {
            let h = contextual_entropy(&weights).unwrap();
            let n = weights.len() as f64;
            prop_assert!(h >= 0.0 && h <= n.ln() + 1e-9);

            let scaled: Vec<f64> = weights.iter().map(|w| w * k).collect();
            prop_assert!((contextual_entropy(&scaled).unwrap() - h).abs() < 1e-9);

            let mut rotated = weights.clone();
            rotated.rotate_left(rot % weights.len());
            prop_assert!((contextual_entropy(&rotated).unwrap() - h).abs() < 1e-9);
        }

        #[test]
        fn uniform_weights_reach_the_maximum(n in 1usize..64, c in 0.001f64..1.0) {
            let h = contextual_entropy(&vec![c; n]).unwrap();
            prop_assert!((h - (n as f64).ln()).abs() < 1e-9);
        }
    }
}
