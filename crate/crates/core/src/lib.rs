//! Contextual memory engine: captures decision traces with their rationale,
//! versions and lineage, scores them for utility and coherence, watches for
//! drift between original and reinterpreted reasoning, and reassembles
//! context bundles for later audit.

pub mod bench;
pub mod config;
pub mod drift;
pub mod embedding;
pub mod engine;
pub mod model;
pub mod regeneration;
pub mod scoring;
pub mod store;
pub mod synth;

pub use config::EngineConfig;
pub use engine::{Engine, EngineError, EngineOptions};
