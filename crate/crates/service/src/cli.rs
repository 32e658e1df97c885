//! Command-line entry points.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use insight_core::bench::{self, BenchSpec};
use insight_core::engine::ErrorKind;
use insight_core::model::{Timestamp, TraceId};
use insight_core::store::StoreError;
use insight_core::{Engine, EngineConfig, EngineError, EngineOptions};

use crate::api::parse_questions;

/// Exit status for a reference to an entity that does not exist.
pub const EXIT_NOT_FOUND: u8 = 2;
pub const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "insight", version, about = "Contextual memory for decision rationale")]
pub struct Cli {
    /// Engine configuration file (TOML).
    #[arg(long, global = true, env = "INSIGHT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Data directory; overrides the configuration file.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Listen address; overrides configuration and environment.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Append the events of a JSONL log (`-` for stdin).
    Import { path: PathBuf },
    /// Write the event log as JSONL (`-` for stdout).
    Export { path: PathBuf },
    /// Print a trace's lineage and how reconstructable its context is.
    Audit {
        trace_id: String,
        /// Comma-separated questions; all when omitted.
        #[arg(long)]
        questions: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Scan every trace for drift and print the new reports.
    ScanDrift,
    /// Assemble a context bundle for a query.
    Regenerate {
        #[arg(long)]
        query: String,
        /// Milliseconds since the Unix epoch.
        #[arg(long)]
        as_of: Option<i64>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Load a synthetic corpus into a scratch engine and report latencies.
    Bench {
        #[arg(long, default_value_t = BenchSpec::default().traces)]
        traces: usize,
        #[arg(long, default_value_t = BenchSpec::default().searches)]
        searches: usize,
        #[arg(long, default_value_t = BenchSpec::default().regenerations)]
        regenerations: usize,
        #[arg(long, default_value_t = BenchSpec::default().mutations)]
        mutations: usize,
        #[arg(long, default_value_t = BenchSpec::default().seed)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn failure(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let message = match &e {
            EngineError::Storage(StoreError::CorruptLog { position, reason }) => {
                format!("line {position}: {reason}")
            }
            _ => e.to_string(),
        };
        let code = if e.kind() == ErrorKind::NotFound { EXIT_NOT_FOUND } else { EXIT_FAILURE };
        CliError { code, message }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::failure(e.to_string())
    }
}

impl Cli {
    pub fn engine_config(&self) -> Result<EngineConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => EngineConfig::load(path).map_err(|e| CliError::failure(e.to_string()))?,
            None => {
                let mut c = EngineConfig::default();
                c.apply_env();
                c
            }
        };
        if let Some(dir) = &self.data_dir {
            config.data_dir = Some(dir.clone());
        }
        Ok(config)
    }
}

fn open(config: EngineConfig, background_scoring: bool) -> Result<Engine, CliError> {
    Ok(Engine::open_with(
        config,
        EngineOptions {
            background_scoring,
            ..EngineOptions::default()
        },
    )?)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::failure(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// Runs one command. Output goes to stdout; the caller reports errors.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.engine_config()?;
    match cli.command {
        Command::Serve { listen } => serve(config, listen),
        Command::Import { path } => {
            let engine = open(config, false)?;
            let reader: Box<dyn Read> = if path.as_os_str() == "-" {
                Box::new(io::stdin().lock())
            } else {
                Box::new(BufReader::new(File::open(&path)?))
            };
            let n = engine.import(reader)?;
            engine.shutdown()?;
            println!("imported {n} events; state {}", engine.state_hash());
            Ok(())
        }
        Command::Export { path } => {
            let engine = open(config, false)?;
            let n = if path.as_os_str() == "-" {
                engine.export(io::stdout().lock())?
            } else {
                let mut w = BufWriter::new(File::create(&path)?);
                let n = engine.export(&mut w)?;
                w.flush()?;
                n
            };
            eprintln!("exported {n} events; state {}", engine.state_hash());
            Ok(())
        }
        Command::Audit {
            trace_id,
            questions,
            json,
        } => {
            let id: TraceId = trace_id.parse().map_err(|_| CliError {
                code: EXIT_NOT_FOUND,
                message: format!("unknown trace {trace_id}"),
            })?;
            let questions = parse_questions(questions.as_deref())?;
            let engine = open(config, false)?;
            let report = engine.audit(id, &questions)?;
            if json {
                return print_json(&report);
            }
            println!("trace {}{}", report.lineage.trace_id, if report.lineage.redacted { " (redacted)" } else { "" });
            for v in &report.lineage.versions {
                println!(
                    "  v{} {} {} by {}: {}",
                    v.seq,
                    v.version_id,
                    v.created_at.0,
                    v.author.actor_id,
                    v.rationale
                );
                if !v.change_note.is_empty() {
                    println!("      note: {}", v.change_note);
                }
            }
            for e in &report.lineage.derivations {
                println!("  edge {} -{}-> {}", e.from_id, relation_name(e.relation), e.to_id);
            }
            for r in &report.lineage.references {
                println!("  reference {r}");
            }
            let retained = report.retained.retained();
            for q in &report.questions {
                let mark = if retained.contains(q) { "yes" } else { "no " };
                println!("  [{mark}] {q}?");
            }
            let r = &report.reconstructability;
            println!("reconstructability {:.4} ({}/{})", r.value, r.answered, r.total);
            Ok(())
        }
        Command::ScanDrift => {
            let engine = open(config, false)?;
            let reports = engine.scan_for_drift()?;
            engine.shutdown()?;
            print_json(&reports)?;
            eprintln!("{} new drift reports", reports.len());
            Ok(())
        }
        Command::Regenerate { query, as_of, k } => {
            let engine = open(config, false)?;
            let bundle = engine.regenerate(&query, as_of.map(Timestamp), k)?;
            println!("{}", bundle.to_canonical_json());
            Ok(())
        }
        Command::Bench {
            traces,
            searches,
            regenerations,
            mutations,
            seed,
            json,
        } => {
            let spec = BenchSpec {
                traces,
                searches,
                regenerations,
                mutations,
                seed,
                ..BenchSpec::default()
            };
            // scratch engine: the configured data directory is left alone
            let scratch = EngineConfig {
                data_dir: None,
                ..config
            };
            let engine = open(scratch, true)?;
            let report = bench::run(&engine, &spec)?;
            engine.stop_scoring_worker();
            if json {
                print_json(&report)?;
            } else {
                println!("{}", report.render());
            }
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::failure("latency targets missed"))
            }
        }
    }
}

fn relation_name(r: insight_core::store::Relation) -> String {
    serde_json::to_value(r)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn serve(config: EngineConfig, listen: Option<String>) -> Result<(), CliError> {
    let address = listen.unwrap_or_else(|| config.listen_address.clone());
    let engine = Arc::new(open(config, true)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&address).await?;
        tracing::info!(address = %listener.local_addr()?, "listening");
        eprintln!("listening on {}", listener.local_addr()?);
        crate::serve(engine, listener, crate::shutdown_signal()).await
    })?;
    Ok(())
}
