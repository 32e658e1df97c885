//! Exact vector index over version renderings.
//!
//! Rows are unit-normalized and packed into one flat buffer, so a query is a
//! single linear pass of dot products. Each trace keeps its version rows in
//! recording order; as-of queries pick the last row recorded at or before
//! the cut-off.

use std::collections::HashMap;

use crate::embedding::{dot, EmbeddingVector};
use crate::model::{Timestamp, TraceId, VersionId};

#[derive(Debug, Clone)]
struct Entry {
    trace_id: TraceId,
    created_at: Timestamp,
    recorded_at: Timestamp,
    redacted: bool,
    /// (recorded_at, version, row) in seq order.
    rows: Vec<(Timestamp, VersionId, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub trace_id: TraceId,
    pub version_id: VersionId,
    pub created_at: Timestamp,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dims: usize,
    data: Vec<f64>,
    entries: Vec<Entry>,
    by_trace: HashMap<TraceId, usize>,
    by_version: HashMap<VersionId, usize>,
}

impl VectorIndex {
    pub fn new(dims: usize) -> Self {
        VectorIndex {
            dims,
            data: Vec::new(),
            entries: Vec::new(),
            by_trace: HashMap::new(),
            by_version: HashMap::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push_row(&mut self, v: &EmbeddingVector) -> usize {
        debug_assert_eq!(v.dims(), self.dims);
        let row = self.data.len() / self.dims;
        if v.is_degenerate() {
            self.data.extend(std::iter::repeat_n(0.0, self.dims));
        } else {
            let n = v.norm();
            self.data.extend(v.values().iter().map(|x| x / n));
        }
        row
    }

    pub fn add_trace(&mut self, trace_id: TraceId, created_at: Timestamp, recorded_at: Timestamp) {
        let idx = self.entries.len();
        self.entries.push(Entry {
            trace_id,
            created_at,
            recorded_at,
            redacted: false,
            rows: Vec::new(),
        });
        self.by_trace.insert(trace_id, idx);
    }

    pub fn add_version(
        &mut self,
        trace_id: TraceId,
        version_id: VersionId,
        recorded_at: Timestamp,
        embedding: &EmbeddingVector,
    ) {
        let row = self.push_row(embedding);
        let idx = self.by_trace[&trace_id];
        self.entries[idx].rows.push((recorded_at, version_id, row));
        self.by_version.insert(version_id, row);
    }

    pub fn mark_redacted(&mut self, trace_id: TraceId) {
        if let Some(&idx) = self.by_trace.get(&trace_id) {
            let entry = &mut self.entries[idx];
            entry.redacted = true;
            for &(_, _, row) in &entry.rows {
                self.data[row * self.dims..(row + 1) * self.dims].fill(0.0);
            }
        }
    }

    /// Unit-normalized stored embedding of a version (zeros if degenerate).
    pub fn row(&self, version_id: VersionId) -> Option<&[f64]> {
        let row = *self.by_version.get(&version_id)?;
        Some(&self.data[row * self.dims..(row + 1) * self.dims])
    }

    pub fn embedding(&self, version_id: VersionId) -> Option<EmbeddingVector> {
        self.row(version_id)
            .map(|r| EmbeddingVector::new(r.to_vec()).expect("stored rows are finite"))
    }

    /// Cosine of `query` against the head (as of `as_of`) of every live
    /// trace. Degenerate pairs score 0.
    pub fn scan(&self, query: &EmbeddingVector, as_of: Option<Timestamp>) -> Vec<Candidate> {
        let q: Vec<f64> = if query.is_degenerate() {
            vec![0.0; self.dims]
        } else {
            query.values().iter().map(|x| x / query.norm()).collect()
        };
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.redacted {
                continue;
            }
            let head = match as_of {
                None => e.rows.last(),
                Some(t) if e.recorded_at > t => continue,
                Some(t) => e.rows.iter().rev().find(|(at, _, _)| *at <= t),
            };
            let Some(&(_, version_id, row)) = head else {
                continue;
            };
            let sim = dot(&q, &self.data[row * self.dims..(row + 1) * self.dims]);
            out.push(Candidate {
                trace_id: e.trace_id,
                version_id,
                created_at: e.created_at,
                // -0.0 would order differently from 0.0 under total_cmp
                similarity: sim.clamp(-1.0, 1.0) + 0.0,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdGenerator;

    #[test]
    fn as_of_picks_last_recorded_row() {
        let mut gen = IdGenerator::seeded(2);
        let mut index = VectorIndex::new(2);
        let t = TraceId(gen.next(Timestamp(10)));
        let (v1, v2) = (VersionId(gen.next(Timestamp(10))), VersionId(gen.next(Timestamp(20))));
        index.add_trace(t, Timestamp(10), Timestamp(10));
        index.add_version(t, v1, Timestamp(10), &EmbeddingVector::new(vec![1.0, 0.0]).unwrap());
        index.add_version(t, v2, Timestamp(20), &EmbeddingVector::new(vec![0.0, 3.0]).unwrap());

        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert!(index.scan(&q, Some(Timestamp(5))).is_empty());
        let early = index.scan(&q, Some(Timestamp(15)));
        assert_eq!((early[0].version_id, early[0].similarity), (v1, 1.0));
        let now = index.scan(&q, None);
        assert_eq!((now[0].version_id, now[0].similarity), (v2, 0.0));

        index.mark_redacted(t);
        assert!(index.scan(&q, None).is_empty());
        assert_eq!(index.row(v2).unwrap(), &[0.0, 0.0]);
    }
}
