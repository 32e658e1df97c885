use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output};

use insight_core::model::{ActorRef, Alternative, RawSignal, RawTrace};
use insight_core::store::{LOG_FILE, SNAPSHOT_FILE};
use insight_core::{Engine, EngineConfig};
use tempfile::TempDir;

fn insight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_insight"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("INSIGHT_CONFIG")
        .env_remove("INSIGHT_LISTEN_ADDRESS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn raw(rationale: &str) -> RawTrace {
    RawTrace {
        subject: "Treatment plan".into(),
        rationale: rationale.into(),
        alternatives: vec![Alternative {
            option: "Z".into(),
            reason_rejected: "Z was considered but unavailable".into(),
        }],
        assumptions: vec!["Allergy to Y rules it out".into()],
        signals: vec![RawSignal {
            kind: Some("historical".into()),
            source: Some("user".into()),
            scope: Some("task".into()),
            state: Some("active".into()),
            label: "prior course of X".into(),
            payload: String::new(),
        }],
        actor: Some(ActorRef::new("dr-osei", "physician")),
        ..RawTrace::default()
    }
}

/// A data directory holding a few traces, one of them revised.
fn seeded_dir() -> (TempDir, String, String) {
    let dir = TempDir::new().unwrap();
    let engine = Engine::open(EngineConfig::in_dir(dir.path())).unwrap();
    let first = engine.capture(raw("Patient was previously non-responsive to X"), None).unwrap().trace.trace_id;
    engine.capture(raw("Start iron supplementation before W"), None).unwrap();
    engine
        .revise(
            first,
            "Quarterly budget moved to the logistics vendor".into(),
            ActorRef::new("dr-mensah", "physician"),
            "rewritten".into(),
        )
        .unwrap();
    let hash = engine.state_hash();
    engine.shutdown().unwrap();
    (dir, first.to_string(), hash)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn audit_of_unknown_trace_exits_2() {
    let (dir, _, _) = seeded_dir();
    for id in ["01ARZ3NDEKTSV4RRFFQ69G5FAV", "nonsense"] {
        let out = insight(&["--data-dir", path(dir.path()), "audit", id]);
        assert_eq!(out.status.code(), Some(2), "{id}");
        assert!(stderr(&out).contains("unknown trace"), "{}", stderr(&out));
    }
}

#[test]
fn audit_prints_lineage_and_reconstructability() {
    let (dir, id, _) = seeded_dir();
    let out = insight(&["--data-dir", path(dir.path()), "audit", &id]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("v1 "), "{text}");
    assert!(text.contains("v2 "), "{text}");
    assert!(text.contains("note: rewritten"), "{text}");
    assert!(text.contains("reconstructability 1.0000 (6/6)"), "{text}");

    let out = insight(&["--data-dir", path(dir.path()), "audit", &id, "--json", "--questions", "has_rationale"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["reconstructability"]["total"], 1);
    assert_eq!(v["lineage"]["versions"].as_array().unwrap().len(), 2);
}

#[test]
fn export_then_import_reproduces_the_state() {
    let (src, _, hash) = seeded_dir();
    let work = TempDir::new().unwrap();
    let file = work.path().join("events.jsonl");
    let out = insight(&["--data-dir", path(src.path()), "export", path(&file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains(&hash));

    let dst = work.path().join("copy");
    let out = insight(&["--data-dir", path(&dst), "import", path(&file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains(&format!("state {hash}")), "{}", stdout(&out));
    assert!(dst.join(LOG_FILE).exists());
    assert!(dst.join(SNAPSHOT_FILE).exists());

    let reopened = Engine::open(EngineConfig::in_dir(&dst)).unwrap();
    assert_eq!(reopened.state_hash(), hash);
}

#[test]
fn import_reports_the_first_bad_line() {
    let (src, _, _) = seeded_dir();
    let work = TempDir::new().unwrap();
    let file = work.path().join("events.jsonl");
    insight(&["--data-dir", path(src.path()), "export", path(&file)]);
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.insert(1, "{\"not\": \"an event\"}");
    std::fs::write(&file, lines.join("\n")).unwrap();

    let dst = work.path().join("copy");
    let out = insight(&["--data-dir", path(&dst), "import", path(&file)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    let empty = Engine::open(EngineConfig::in_dir(&dst)).unwrap();
    assert_eq!(empty.position(), 0);
}

#[test]
fn scan_drift_and_regenerate() {
    let (dir, id, _) = seeded_dir();
    let out = insight(&["--data-dir", path(dir.path()), "scan-drift"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 1);
    assert_eq!(reports[0]["trace_id"], id.as_str());
    let again = insight(&["--data-dir", path(dir.path()), "scan-drift"]);
    let none: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert!(none.as_array().unwrap().is_empty());

    let out = insight(&["--data-dir", path(dir.path()), "regenerate", "--query", "iron supplementation", "--k", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let bundle: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(bundle["items"].as_array().unwrap().len(), 1);
    assert!(bundle["items"][0]["head"]["rationale"].as_str().unwrap().contains("iron"));

    let out = insight(&["--data-dir", path(dir.path()), "regenerate", "--query", "x", "--k", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_is_validated() {
    let work = TempDir::new().unwrap();
    let bad = work.path().join("bad.toml");
    std::fs::write(&bad, "listen_adress = \"0.0.0.0:1\"\n").unwrap();
    let out = insight(&["--config", path(&bad), "scan-drift"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("listen_adress"), "{}", stderr(&out));

    let good = work.path().join("good.toml");
    let config = EngineConfig::in_dir(work.path().join("data"));
    std::fs::write(&good, config.to_toml_string()).unwrap();
    let out = insight(&["--config", path(&good), "scan-drift"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(work.path().join("data").join(LOG_FILE).exists() || work.path().join("data").is_dir());
}

#[test]
fn bench_reports_latencies() {
    let out = insight(&[
        "bench",
        "--traces",
        "2000",
        "--searches",
        "20",
        "--regenerations",
        "10",
        "--mutations",
        "3",
        "--json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["traces"], 2000);
    assert_eq!(report["dims"], 256);
    assert_eq!(report["search"]["samples"], 20);
    assert!(report["search"]["p95_ms"].as_f64().unwrap() >= report["search"]["p50_ms"].as_f64().unwrap());
    assert_eq!(report["regenerate"]["samples"], 10);
    assert_eq!(report["scoring_refresh"]["samples"], 3);
}

fn http(addr: &str, request: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_answers_requests_and_snapshots_on_shutdown() {
    let dir = TempDir::new().unwrap();
    let engine = std::sync::Arc::new(
        Engine::open(EngineConfig {
            snapshot_every: 0,
            ..EngineConfig::in_dir(dir.path())
        })
        .unwrap(),
    );
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(insight_service::serve(engine.clone(), listener, async {
        let _ = stopped.await;
    }));

    let body = serde_json::to_string(&raw("Patient was previously non-responsive to X")).unwrap();
    let response = http(
        &addr,
        &format!(
            "POST /traces HTTP/1.1\r\nHost: test\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    );
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    let response = http(&addr, "GET /metrics/entropy HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(!dir.path().join(SNAPSHOT_FILE).exists());

    stop.send(()).unwrap();
    rt.block_on(server).unwrap().unwrap();
    let snapshot = std::fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&snapshot).unwrap();
    assert_eq!(v["position"], 1);
}

#[cfg(unix)]
#[test]
fn serve_binary_honours_env_address_and_sigterm() {
    use std::io::BufRead;
    use std::process::Stdio;

    let dir = TempDir::new().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_insight"))
        .args(["--data-dir", path(dir.path()), "serve"])
        .env("RUST_LOG", "warn")
        .env("INSIGHT_LISTEN_ADDRESS", "127.0.0.1:0")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = std::io::BufReader::new(child.stderr.take().unwrap()).lines();
    let line = lines.next().unwrap().unwrap();
    let addr = line.strip_prefix("listening on ").expect("listening line").to_string();

    let response = http(&addr, "GET /health HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert!(status.success(), "{status:?}");
    assert!(dir.path().join(SNAPSHOT_FILE).exists());
}
