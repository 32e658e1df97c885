//! Latency harness: loads a synthetic corpus and measures search,
//! regeneration and the delay until a mutation's score refresh is visible.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Result};
use crate::model::{ActorRef, TraceId};
use crate::synth::{query, raw_trace, CorpusSpec};

pub const SEARCH_P95_TARGET_MS: f64 = 250.0;
pub const REGENERATE_P95_TARGET_MS: f64 = 1_000.0;
pub const SCORING_REFRESH_TARGET_MS: f64 = 5_000.0;

const LOAD_CHUNK: usize = 5_000;
const REFRESH_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub traces: usize,
    pub searches: usize,
    pub regenerations: usize,
    pub mutations: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            traces: 100_000,
            searches: 200,
            regenerations: 100,
            mutations: 20,
            k: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[Duration]) -> Self {
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        LatencySummary {
            samples: ms.len(),
            p50_ms: percentile(&ms, 0.50),
            p95_ms: percentile(&ms, 0.95),
            max_ms: ms.last().copied().unwrap_or(0.0),
        }
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub traces: usize,
    pub dims: usize,
    pub load_ms: f64,
    pub search: LatencySummary,
    pub regenerate: LatencySummary,
    pub scoring_refresh: LatencySummary,
}

impl BenchReport {
    pub fn search_ok(&self) -> bool {
        self.search.p95_ms < SEARCH_P95_TARGET_MS
    }

    pub fn regenerate_ok(&self) -> bool {
        self.regenerate.p95_ms < REGENERATE_P95_TARGET_MS
    }

    pub fn scoring_ok(&self) -> bool {
        self.scoring_refresh.max_ms < SCORING_REFRESH_TARGET_MS
    }

    pub fn passed(&self) -> bool {
        self.search_ok() && self.regenerate_ok() && self.scoring_ok()
    }

    pub fn render(&self) -> String {
        let mark = |ok: bool| if ok { "ok" } else { "MISS" };
        format!(
            "traces={} dims={} load={:.0}ms\n\
             search      p50={:.2}ms p95={:.2}ms (target < {SEARCH_P95_TARGET_MS}ms) {}\n\
             regenerate  p50={:.2}ms p95={:.2}ms (target < {REGENERATE_P95_TARGET_MS}ms) {}\n\
             score delay p50={:.2}ms p95={:.2}ms max={:.2}ms (target < {SCORING_REFRESH_TARGET_MS}ms) {}",
            self.traces,
            self.dims,
            self.load_ms,
            self.search.p50_ms,
            self.search.p95_ms,
            mark(self.search_ok()),
            self.regenerate.p50_ms,
            self.regenerate.p95_ms,
            mark(self.regenerate_ok()),
            self.scoring_refresh.p50_ms,
            self.scoring_refresh.p95_ms,
            self.scoring_refresh.max_ms,
            mark(self.scoring_ok()),
        )
    }
}

/// Captures `spec.traces` synthetic traces into `engine` in large clusters.
pub fn load_corpus(engine: &Engine, spec: &BenchSpec) -> Result<Vec<TraceId>> {
    let corpus = CorpusSpec {
        seed: spec.seed,
        ..CorpusSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ids = Vec::with_capacity(spec.traces);
    let mut i = 0;
    while i < spec.traces {
        let n = LOAD_CHUNK.min(spec.traces - i);
        let batch = (i..i + n).map(|j| raw_trace(&mut rng, &corpus, j)).collect();
        ids.extend(engine.capture_batch(batch)?.into_iter().map(|t| t.trace_id));
        i += n;
    }
    Ok(ids)
}

/// Loads the corpus, then times searches, regenerations and score
/// refreshes. The engine should be empty and run its scoring worker.
pub fn run(engine: &Engine, spec: &BenchSpec) -> Result<BenchReport> {
    let started = Instant::now();
    let ids = load_corpus(engine, spec)?;
    engine.refresh_scores();
    let load_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut search = Vec::with_capacity(spec.searches);
    for _ in 0..spec.searches {
        let q = query(&mut rng, 4);
        let t = Instant::now();
        let hits = engine.search(&q, spec.k, None)?;
        search.push(t.elapsed());
        debug_assert!(hits.len() <= spec.k);
    }

    let mut regenerate = Vec::with_capacity(spec.regenerations);
    for _ in 0..spec.regenerations {
        let q = query(&mut rng, 4);
        let t = Instant::now();
        engine.regenerate(&q, None, spec.k)?;
        regenerate.push(t.elapsed());
    }

    let actor = ActorRef::new("bench", "reviewer");
    let mut refresh = Vec::with_capacity(spec.mutations);
    for _ in 0..spec.mutations {
        let Some(&trace_id) = ids.get(rng.gen_range(0..ids.len().max(1))) else {
            break;
        };
        let t = Instant::now();
        engine.record_feedback(trace_id, rng.gen_range(0.0..=1.0), actor.clone(), String::new())?;
        let position = engine.position();
        while engine.score(trace_id).is_none_or(|s| s.position < position) {
            if t.elapsed() > REFRESH_TIMEOUT {
                break;
            }
            std::thread::sleep(Duration::from_micros(200));
        }
        refresh.push(t.elapsed());
    }

    Ok(BenchReport {
        traces: spec.traces,
        dims: engine.read().embedder().dims(),
        load_ms,
        search: LatencySummary::from_samples(&search),
        regenerate: LatencySummary::from_samples(&regenerate),
        scoring_refresh: LatencySummary::from_samples(&refresh),
    })
}
