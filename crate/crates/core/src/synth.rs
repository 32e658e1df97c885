//! Seeded synthetic corpora for drift calibration and load testing.
//!
//! Rationales are drawn from a base vocabulary. Divergent revisions are
//! rewritten entirely from a disjoint vocabulary, so the generator knows
//! exactly which revisions ought to be flagged; benign revisions swap a
//! single word.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ActorRef, Alternative, RawSignal, RawTrace};

const BASE_VOCAB: usize = 5_000;
const DIVERGENT_VOCAB: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub traces: usize,
    /// Traces whose rationale is rewritten with token-disjoint text.
    pub divergent: usize,
    /// Share of the remaining traces that get a one-word edit.
    pub benign_fraction: f64,
    pub rationale_words: usize,
    pub assumption_words: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 42,
            traces: 1_000,
            divergent: 50,
            benign_fraction: 0.3,
            rationale_words: 12,
            assumption_words: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRevision {
    /// Index into [`SyntheticCorpus::traces`].
    pub index: usize,
    pub rationale: String,
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub traces: Vec<RawTrace>,
    pub revisions: Vec<PlannedRevision>,
}

impl SyntheticCorpus {
    pub fn divergent_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .revisions
            .iter()
            .filter(|r| r.divergent)
            .map(|r| r.index)
            .collect();
        v.sort_unstable();
        v
    }
}

pub fn base_word(i: usize) -> String {
    format!("w{i}")
}

pub fn divergent_word(i: usize) -> String {
    format!("q{i}z")
}

fn words(rng: &mut ChaCha8Rng, n: usize, vocab: usize, word: fn(usize) -> String) -> Vec<String> {
    (0..n).map(|_| word(rng.gen_range(0..vocab))).collect()
}

/// A random query over the base vocabulary.
pub fn query(rng: &mut ChaCha8Rng, n_words: usize) -> String {
    words(rng, n_words, BASE_VOCAB, base_word).join(" ")
}

pub fn raw_trace(rng: &mut ChaCha8Rng, spec: &CorpusSpec, i: usize) -> RawTrace {
    let rationale = words(rng, spec.rationale_words, BASE_VOCAB, base_word).join(" ");
    let assumption = words(rng, spec.assumption_words, BASE_VOCAB, base_word).join(" ");
    RawTrace {
        subject: format!("decision {i}"),
        rationale,
        alternatives: vec![Alternative {
            option: base_word(rng.gen_range(0..BASE_VOCAB)),
            reason_rejected: "not chosen".into(),
        }],
        assumptions: vec![assumption],
        signals: vec![RawSignal {
            kind: Some("procedural".into()),
            source: Some("system".into()),
            scope: Some("task".into()),
            state: Some("active".into()),
            label: format!("step-{}", i % 17),
            payload: String::new(),
        }],
        actor: Some(ActorRef::new(format!("actor-{}", i % 23), "analyst")),
        ..RawTrace::default()
    }
}

/// Traces plus a revision plan. Exactly `spec.divergent` traces are
/// rewritten from the disjoint vocabulary.
pub fn generate(spec: &CorpusSpec) -> SyntheticCorpus {
    assert!(spec.divergent <= spec.traces, "more divergent traces than traces");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let traces: Vec<RawTrace> = (0..spec.traces).map(|i| raw_trace(&mut rng, spec, i)).collect();

    let mut order: Vec<usize> = (0..spec.traces).collect();
    order.shuffle(&mut rng);
    let (divergent, rest) = order.split_at(spec.divergent);
    let mut revisions = Vec::new();
    for &index in divergent {
        revisions.push(PlannedRevision {
            index,
            rationale: words(&mut rng, spec.rationale_words, DIVERGENT_VOCAB, divergent_word).join(" "),
            divergent: true,
        });
    }
    for &index in rest {
        if !rng.gen_bool(spec.benign_fraction) {
            continue;
        }
        let mut tokens: Vec<String> = traces[index].rationale.split(' ').map(String::from).collect();
        let pos = rng.gen_range(0..tokens.len());
        tokens[pos] = base_word(rng.gen_range(0..BASE_VOCAB));
        revisions.push(PlannedRevision {
            index,
            rationale: tokens.join(" "),
            divergent: false,
        });
    }
    revisions.sort_by_key(|r| r.index);
    SyntheticCorpus { traces, revisions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::tokenize;
    use std::collections::HashSet;

    #[test]
    fn generation_is_seeded() {
        let spec = CorpusSpec {
            traces: 50,
            divergent: 5,
            ..CorpusSpec::default()
        };
        assert_eq!(generate(&spec), generate(&spec));
        assert_eq!(generate(&spec).divergent_indices().len(), 5);
    }

    #[test]
    fn divergent_rewrites_share_no_token_with_the_original() {
        let corpus = generate(&CorpusSpec::default());
        for r in corpus.revisions.iter().filter(|r| r.divergent) {
            let before: HashSet<String> = tokenize(&corpus.traces[r.index].rationale).collect();
            assert!(tokenize(&r.rationale).all(|t| !before.contains(&t)));
        }
    }

    #[test]
    fn benign_edits_change_at_most_one_word() {
        let corpus = generate(&CorpusSpec::default());
        for r in corpus.revisions.iter().filter(|r| !r.divergent) {
            let before: Vec<&str> = corpus.traces[r.index].rationale.split(' ').collect();
            let after: Vec<&str> = r.rationale.split(' ').collect();
            let changed = before.iter().zip(&after).filter(|(a, b)| a != b).count();
            assert!(changed <= 1);
        }
    }
}
