//! Coherence weights (recency decay times review status) and the memory
//! utility score used to rank surfaced memory.

use serde::{Deserialize, Serialize};

use crate::model::Timestamp;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("invalid coherence params: {0}")]
    InvalidParams(String),
    #[error("invalid utility weights: {0}")]
    InvalidWeights(String),
    #[error("utility input {field} = {value} outside [0, 1]")]
    InputOutOfRange { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Confirmed,
    Unreviewed,
    Retired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewFactors {
    pub confirmed: f64,
    pub unreviewed: f64,
    pub retired: f64,
}

impl Default for ReviewFactors {
    fn default() -> Self {
        ReviewFactors {
            confirmed: 1.0,
            unreviewed: 0.5,
            retired: 0.1,
        }
    }
}

impl ReviewFactors {
    pub fn factor(&self, status: ReviewStatus) -> f64 {
        match status {
            ReviewStatus::Confirmed => self.confirmed,
            ReviewStatus::Unreviewed => self.unreviewed,
            ReviewStatus::Retired => self.retired,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceParams {
    #[serde(default = "default_half_life")]
    pub half_life_days: f64,
    #[serde(default)]
    pub review_factor: ReviewFactors,
}

fn default_half_life() -> f64 {
    30.0
}

impl Default for CoherenceParams {
    fn default() -> Self {
        CoherenceParams {
            half_life_days: default_half_life(),
            review_factor: ReviewFactors::default(),
        }
    }
}

impl CoherenceParams {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.half_life_days.is_finite() && self.half_life_days > 0.0) {
            return Err(ScoringError::InvalidParams(format!(
                "half_life_days must be finite and positive, got {}",
                self.half_life_days
            )));
        }
        let f = self.review_factor;
        for (name, v) in [("confirmed", f.confirmed), ("unreviewed", f.unreviewed), ("retired", f.retired)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScoringError::InvalidParams(format!("review factor {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `exp(-ln2 * age_days / half_life) * review_factor`, clamped to [0, 1].
/// A `now` earlier than `created_at` is treated as zero age.
pub fn coherence(
    created_at: Timestamp,
    status: ReviewStatus,
    now: Timestamp,
    params: &CoherenceParams,
) -> f64 {
    let age_days = now.days_since(created_at).max(0.0);
    let decay = (-std::f64::consts::LN_2 * age_days / params.half_life_days).exp();
    (decay * params.review_factor.factor(status)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityInputs {
    pub reuse_count: u64,
    pub feedback: f64,
    pub alignment: f64,
    pub drift: f64,
}

impl UtilityInputs {
    pub fn validate(&self) -> Result<(), ScoringError> {
        for (field, value) in [
            ("feedback", self.feedback),
            ("alignment", self.alignment),
            ("drift", self.drift),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ScoringError::InputOutOfRange { field, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityWeights {
    pub w_reuse: f64,
    pub w_feedback: f64,
    pub w_alignment: f64,
    pub w_antidrift: f64,
    /// Reuse count at which the reuse component saturates.
    #[serde(default = "default_reuse_cap")]
    pub reuse_cap: u64,
}

fn default_reuse_cap() -> u64 {
    100
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            w_reuse: 0.3,
            w_feedback: 0.2,
            w_alignment: 0.3,
            w_antidrift: 0.2,
            reuse_cap: default_reuse_cap(),
        }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let w = [self.w_reuse, self.w_feedback, self.w_alignment, self.w_antidrift];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ScoringError::InvalidWeights("weights must be non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScoringError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        if self.reuse_cap == 0 {
            return Err(ScoringError::InvalidWeights("reuse_cap must be >= 1".into()));
        }
        Ok(())
    }

    /// `ln(1 + reuse) / ln(1 + cap)`, capped at 1.
    pub fn reuse_component(&self, reuse_count: u64) -> f64 {
        let r = (reuse_count as f64).ln_1p() / (self.reuse_cap as f64).ln_1p();
        r.min(1.0)
    }
}

/// Linear weighted utility in [0, 1].
pub fn utility(inputs: &UtilityInputs, weights: &UtilityWeights) -> f64 {
    let r = weights.reuse_component(inputs.reuse_count);
    let u = weights.w_reuse * r
        + weights.w_feedback * inputs.feedback
        + weights.w_alignment * inputs.alignment
        + weights.w_antidrift * (1.0 - inputs.drift);
    u.clamp(0.0, 1.0)
}
