#![allow(dead_code)]

use std::sync::Arc;

use insight_core::model::{ActorRef, Alternative, ManualClock, RawSignal, RawTrace, Timestamp};
use insight_core::{Engine, EngineConfig, EngineOptions};

pub const T0: Timestamp = Timestamp(1_700_000_000_000);

pub const GUIDELINE: &str = "guideline:ckd-anemia";
pub const GUIDELINE_V1: &str =
    "First line therapy is oral X for all adult patients; escalate after eight weeks";
pub const GUIDELINE_V2: &str =
    "Revised protocol recommends intravenous W whenever renal function declines; monitor ferritin monthly";

pub fn engine_with(config: EngineConfig, clock: &ManualClock) -> Engine {
    Engine::open_with(
        config,
        EngineOptions {
            clock: Arc::new(clock.clone()),
            id_seed: Some(11),
            background_scoring: false,
        },
    )
    .expect("engine opens")
}

pub fn memory_engine() -> (Engine, ManualClock) {
    let clock = ManualClock::new(T0);
    (engine_with(EngineConfig::default(), &clock), clock)
}

pub fn actor(id: &str) -> ActorRef {
    ActorRef::new(id, "physician")
}

pub fn signal(kind: &str, label: &str) -> RawSignal {
    RawSignal {
        kind: Some(kind.into()),
        source: Some("user".into()),
        scope: Some("task".into()),
        state: Some("active".into()),
        label: label.into(),
        payload: String::new(),
    }
}

pub fn raw(rationale: &str) -> RawTrace {
    RawTrace {
        subject: "decision".into(),
        rationale: rationale.into(),
        alternatives: vec![Alternative {
            option: "defer".into(),
            reason_rejected: "no time".into(),
        }],
        assumptions: vec![],
        signals: vec![signal("procedural", "step")],
        actor: Some(actor("dr-lee")),
        ..RawTrace::default()
    }
}

/// Treatment decision from the clinical handoff scenario.
pub fn treatment_decision() -> RawTrace {
    RawTrace {
        subject: "Treatment plan for patient p-1042".into(),
        rationale: "Patient was previously non-responsive to X".into(),
        alternatives: vec![Alternative {
            option: "Z".into(),
            reason_rejected: "Z was considered but unavailable".into(),
        }],
        assumptions: vec!["Allergy to Y rules it out".into()],
        signals: vec![
            signal("temporal", "follow-up in four weeks"),
            signal("historical", "prior course of X"),
        ],
        actor: Some(actor("dr-osei")),
        links: vec!["patient:p-1042".into(), "dx:N18.3".into(), GUIDELINE.into()],
        ..RawTrace::default()
    }
}
