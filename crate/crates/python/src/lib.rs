//! Python bindings. Structured values cross the boundary as JSON and come
//! back as plain dicts and lists.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::de::DeserializeOwned;
use serde::Serialize;

use insight_core::drift::{self, FlagStatus, ResolutionAction};
use insight_core::embedding::{self, EmbeddingVector, HashEmbedder, TextEmbedder};
use insight_core::engine::{ErrorKind, ResolutionRequest};
use insight_core::model::{ActorRef, FlagId, RawTrace, Timestamp, TraceId};
use insight_core::regeneration::{self, AuditQuestion, RetainedContext};
use insight_core::scoring::{self, CoherenceParams, ReviewStatus, UtilityInputs, UtilityWeights};
use insight_core::store::{NodeId, Relation};
use insight_core::{EngineConfig, EngineError, EngineOptions};

create_exception!(insight_layer, InsightError, PyException);
create_exception!(insight_layer, NotFoundError, InsightError);
create_exception!(insight_layer, ConflictError, InsightError);
create_exception!(insight_layer, ValidationError, InsightError);
create_exception!(insight_layer, UnavailableError, InsightError);

fn engine_err(e: EngineError) -> PyErr {
    let msg = format!("{}: {}", e.code(), e);
    match e.kind() {
        ErrorKind::NotFound => NotFoundError::new_err(msg),
        ErrorKind::Conflict => ConflictError::new_err(msg),
        ErrorKind::Validation | ErrorKind::BadRequest => ValidationError::new_err(msg),
        ErrorKind::Unavailable => UnavailableError::new_err(msg),
        ErrorKind::Internal => InsightError::new_err(msg),
    }
}

fn invalid(e: impl std::fmt::Display) -> PyErr {
    ValidationError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(invalid)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(invalid)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T> {
    s.parse().map_err(|_| invalid(format!("invalid {what}: {s}")))
}

fn actor(value: &Bound<'_, PyAny>) -> PyResult<ActorRef> {
    from_py(value)
}

fn vector(values: Vec<f64>) -> PyResult<EmbeddingVector> {
    EmbeddingVector::new(values).map_err(invalid)
}

/// A memory engine, in memory or backed by a data directory.
#[pyclass(frozen, module = "insight_layer")]
struct Engine {
    inner: insight_core::Engine,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (data_dir=None, config_path=None, background_scoring=true))]
    fn new(data_dir: Option<PathBuf>, config_path: Option<PathBuf>, background_scoring: bool) -> PyResult<Self> {
        let mut config = match config_path {
            Some(p) => EngineConfig::load(&p).map_err(invalid)?,
            None => EngineConfig::default(),
        };
        if data_dir.is_some() {
            config.data_dir = data_dir;
        }
        let inner = insight_core::Engine::open_with(
            config,
            EngineOptions {
                background_scoring,
                ..EngineOptions::default()
            },
        )
        .map_err(engine_err)?;
        Ok(Engine { inner })
    }

    #[getter]
    fn position(&self) -> u64 {
        self.inner.position()
    }

    #[getter]
    fn state_hash(&self) -> String {
        self.inner.state_hash()
    }

    /// Recomputes stale scores now; returns how many were refreshed.
    fn refresh_scores(&self, py: Python<'_>) -> usize {
        py.detach(|| self.inner.refresh_scores())
    }

    fn snapshot(&self, py: Python<'_>) -> PyResult<()> {
        py.detach(|| self.inner.snapshot()).map_err(engine_err)
    }

    fn shutdown(&self, py: Python<'_>) -> PyResult<()> {
        py.detach(|| self.inner.shutdown()).map_err(engine_err)
    }

    /// Captures a trace dict; returns `{"trace": ..., "created": bool}`.
    #[pyo3(signature = (trace, idempotency_key=None))]
    fn capture<'py>(
        &self,
        py: Python<'py>,
        trace: &Bound<'py, PyAny>,
        idempotency_key: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let raw: RawTrace = from_py(trace)?;
        let out = py.detach(|| self.inner.capture(raw, idempotency_key)).map_err(engine_err)?;
        to_py(py, &out)
    }

    #[pyo3(signature = (trace_id, rationale, author, change_note=String::new()))]
    fn revise<'py>(
        &self,
        py: Python<'py>,
        trace_id: &str,
        rationale: String,
        author: &Bound<'py, PyAny>,
        change_note: String,
    ) -> PyResult<Bound<'py, PyAny>> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let author = actor(author)?;
        let v = py
            .detach(|| self.inner.revise(id, rationale, author, change_note))
            .map_err(engine_err)?;
        to_py(py, &v)
    }

    fn link<'py>(&self, py: Python<'py>, from_id: &str, to_id: &str, relation: &str) -> PyResult<Bound<'py, PyAny>> {
        let from = NodeId(parse(from_id, "id")?);
        let to = NodeId(parse(to_id, "id")?);
        let relation: Relation = relation.parse().map_err(invalid)?;
        let edge = py.detach(|| self.inner.link(from, to, relation)).map_err(engine_err)?;
        to_py(py, &edge)
    }

    #[pyo3(signature = (reference, content, linked_traces=Vec::new()))]
    fn ingest_reference<'py>(
        &self,
        py: Python<'py>,
        reference: String,
        content: String,
        linked_traces: Vec<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let linked = linked_traces
            .iter()
            .map(|t| parse::<TraceId>(t, "trace id"))
            .collect::<PyResult<Vec<_>>>()?;
        let rev = py
            .detach(|| self.inner.ingest_reference(reference, content, linked))
            .map_err(engine_err)?;
        to_py(py, &rev)
    }

    fn redact<'py>(&self, py: Python<'py>, trace_id: &str, by: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let by = actor(by)?;
        let rec = py.detach(|| self.inner.redact(id, by)).map_err(engine_err)?;
        to_py(py, &rec)
    }

    fn record_reuse(&self, py: Python<'_>, trace_id: &str, reusing_trace_id: &str) -> PyResult<u64> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let by: TraceId = parse(reusing_trace_id, "trace id")?;
        py.detach(|| self.inner.record_reuse(id, by)).map_err(engine_err)
    }

    #[pyo3(signature = (trace_id, endorsement, by, note=String::new()))]
    fn record_feedback(
        &self,
        py: Python<'_>,
        trace_id: &str,
        endorsement: f64,
        by: &Bound<'_, PyAny>,
        note: String,
    ) -> PyResult<f64> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let by = actor(by)?;
        py.detach(|| self.inner.record_feedback(id, endorsement, by, note))
            .map_err(engine_err)
    }

    fn scan_for_drift<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let reports = py.detach(|| self.inner.scan_for_drift()).map_err(engine_err)?;
        to_py(py, &reports)
    }

    fn check_alignment<'py>(&self, py: Python<'py>, trace_id: &str, rendering: String) -> PyResult<Bound<'py, PyAny>> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let check = py.detach(|| self.inner.check_alignment(id, rendering)).map_err(engine_err)?;
        to_py(py, &check)
    }

    /// `action` is one of `accepted`, `revised`, `retired`.
    #[pyo3(signature = (flag_id, action, by, note=String::new(), revised_rationale=None))]
    fn resolve_flag<'py>(
        &self,
        py: Python<'py>,
        flag_id: &str,
        action: &str,
        by: &Bound<'py, PyAny>,
        note: String,
        revised_rationale: Option<String>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let id: FlagId = parse(flag_id, "flag id")?;
        let action: ResolutionAction =
            serde_json::from_value(serde_json::Value::String(action.into())).map_err(invalid)?;
        let req = ResolutionRequest {
            action,
            actor: actor(by)?,
            note,
            revised_rationale,
        };
        let resolved = py.detach(|| self.inner.resolve_flag(id, req)).map_err(engine_err)?;
        to_py(py, &resolved)
    }

    #[pyo3(signature = (query, k=10, as_of=None))]
    fn search<'py>(&self, py: Python<'py>, query: &str, k: usize, as_of: Option<i64>) -> PyResult<Bound<'py, PyAny>> {
        let hits = py
            .detach(|| self.inner.search(query, k, as_of.map(Timestamp)))
            .map_err(engine_err)?;
        to_py(py, &hits)
    }

    fn trace<'py>(&self, py: Python<'py>, trace_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let view = py.detach(|| self.inner.trace(id)).map_err(engine_err)?;
        to_py(py, &view)
    }

    fn lineage<'py>(&self, py: Python<'py>, trace_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let lineage = py.detach(|| self.inner.lineage(id)).map_err(engine_err)?;
        to_py(py, &lineage)
    }

    #[pyo3(signature = (query, k=10, as_of=None))]
    fn regenerate<'py>(&self, py: Python<'py>, query: &str, k: usize, as_of: Option<i64>) -> PyResult<Bound<'py, PyAny>> {
        let bundle = py
            .detach(|| self.inner.regenerate(query, as_of.map(Timestamp), k))
            .map_err(engine_err)?;
        to_py(py, &bundle)
    }

    #[pyo3(signature = (trace_id, questions=None))]
    fn audit<'py>(&self, py: Python<'py>, trace_id: &str, questions: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
        let id: TraceId = parse(trace_id, "trace id")?;
        let questions = parse_questions(questions)?;
        let report = py.detach(|| self.inner.audit(id, &questions)).map_err(engine_err)?;
        to_py(py, &report)
    }

    fn entropy<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.entropy())
    }

    #[pyo3(signature = (status=None))]
    fn flags<'py>(&self, py: Python<'py>, status: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let status: Option<FlagStatus> = status.map(|s| parse(s, "flag status")).transpose()?;
        to_py(py, &self.inner.flags(status))
    }

    /// Writes the event log as JSONL; returns the number of events.
    fn export(&self, py: Python<'_>, path: PathBuf) -> PyResult<u64> {
        py.detach(|| {
            let mut w = BufWriter::new(File::create(&path)?);
            let n = self.inner.export(&mut w).map_err(engine_err)?;
            w.flush()?;
            Ok(n)
        })
    }

    /// Appends the events of a JSONL log; returns the number imported.
    fn import_events(&self, py: Python<'_>, path: PathBuf) -> PyResult<u64> {
        py.detach(|| {
            let r = BufReader::new(File::open(&path)?);
            self.inner.import(r).map_err(engine_err)
        })
    }
}

fn parse_questions(questions: Option<Vec<String>>) -> PyResult<Vec<AuditQuestion>> {
    match questions {
        None => Ok(AuditQuestion::ALL.to_vec()),
        Some(qs) => qs.iter().map(|q| q.parse().map_err(invalid)).collect(),
    }
}

/// Shannon entropy of normalized coherence weights, in nats.
#[pyfunction]
fn contextual_entropy(coherence: Vec<f64>) -> PyResult<f64> {
    drift::contextual_entropy(&coherence).map_err(invalid)
}

/// Cosine distance; returns `(drift, degenerate)`.
#[pyfunction]
fn insight_drift(original: Vec<f64>, current: Vec<f64>) -> PyResult<(f64, bool)> {
    let d = drift::insight_drift(&vector(original)?, &vector(current)?).map_err(invalid)?;
    Ok((d.value, d.degenerate))
}

#[pyfunction]
fn resonance(current: Vec<f64>, references: Vec<Vec<f64>>) -> PyResult<f64> {
    let refs = references.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
    drift::resonance(&vector(current)?, &refs).map_err(invalid)
}

/// `None` when either vector has zero norm.
#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<Option<f64>> {
    embedding::cosine(&vector(a)?, &vector(b)?).map_err(invalid)
}

/// The deterministic hashed bag-of-tokens embedding of `text`.
#[pyfunction]
#[pyo3(signature = (text, dims=256))]
fn embed(text: &str, dims: usize) -> PyResult<Vec<f64>> {
    if dims < 8 {
        return Err(invalid("dims must be at least 8"));
    }
    let v = HashEmbedder::new(dims).embed(text).map_err(invalid)?;
    Ok(v.values().to_vec())
}

#[pyfunction]
#[pyo3(signature = (created_at, status, now, params=None))]
fn coherence(created_at: i64, status: &str, now: i64, params: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
    let status: ReviewStatus =
        serde_json::from_value(serde_json::Value::String(status.into())).map_err(invalid)?;
    let params: CoherenceParams = params.map(from_py).transpose()?.unwrap_or_default();
    Ok(scoring::coherence(Timestamp(created_at), status, Timestamp(now), &params))
}

/// `inputs` holds `reuse_count`, `feedback`, `alignment` and `drift`.
#[pyfunction]
#[pyo3(signature = (inputs, weights=None))]
fn utility(inputs: &Bound<'_, PyAny>, weights: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
    let inputs: UtilityInputs = from_py(inputs)?;
    inputs.validate().map_err(invalid)?;
    let weights: UtilityWeights = weights.map(from_py).transpose()?.unwrap_or_default();
    Ok(scoring::utility(&inputs, &weights))
}

/// Fraction of audit questions answerable from the retained contexts.
#[pyfunction]
#[pyo3(signature = (retained, questions=None))]
fn reconstructability<'py>(
    py: Python<'py>,
    retained: &Bound<'py, PyAny>,
    questions: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let subset: Vec<RetainedContext> = from_py(retained)?;
    let questions = parse_questions(questions)?;
    let score = regeneration::reconstructability(&subset, &questions).map_err(invalid)?;
    to_py(py, &score)
}

#[pymodule]
fn insight_layer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Engine>()?;
    m.add("InsightError", py.get_type::<InsightError>())?;
    m.add("NotFoundError", py.get_type::<NotFoundError>())?;
    m.add("ConflictError", py.get_type::<ConflictError>())?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("UnavailableError", py.get_type::<UnavailableError>())?;
    m.add_function(wrap_pyfunction!(contextual_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(insight_drift, m)?)?;
    m.add_function(wrap_pyfunction!(resonance, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(coherence, m)?)?;
    m.add_function(wrap_pyfunction!(utility, m)?)?;
    m.add_function(wrap_pyfunction!(reconstructability, m)?)?;
    m.add("REFERENCE_UPDATE_MESSAGE", drift::REFERENCE_UPDATE_MESSAGE)?;
    Ok(())
}
