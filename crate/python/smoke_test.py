"""Smoke test for the insight_layer extension module.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import math
import os
import tempfile

import insight_layer as il

DOCTOR = {"actor_id": "dr-osei", "role": "physician"}
REVIEWER = {"actor_id": "dr-mensah", "role": "physician"}
GUIDELINE = "guideline:ckd-anemia"


def signal(kind, label):
    return {"kind": kind, "source": "user", "scope": "task", "state": "active", "label": label}


def pure_functions():
    assert abs(il.contextual_entropy([0.5] * 4) - math.log(4)) < 1e-12
    assert abs(il.contextual_entropy([0.9, 0.1]) - 0.325083) < 1e-6
    drift, degenerate = il.insight_drift([1.0, 0.0], [math.sqrt(0.5), math.sqrt(0.5)])
    assert abs(drift - (1 - math.sqrt(2) / 2)) < 1e-12 and not degenerate
    assert il.insight_drift([0.0, 0.0], [1.0, 0.0]) == (1.0, True)
    assert il.cosine([0.0, 0.0], [1.0, 0.0]) is None
    assert abs(il.resonance([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]) - 0.5) < 1e-12
    v = il.embed("Patient was previously non-responsive to X")
    assert len(v) == 256 and abs(sum(x * x for x in v) - 1.0) < 1e-12
    assert il.embed("same text") == il.embed("same text")
    u = il.utility({"reuse_count": 100, "feedback": 1.0, "alignment": 1.0, "drift": 0.0})
    assert abs(u - 1.0) < 1e-12
    month = 30 * 86_400_000
    assert abs(il.coherence(0, "confirmed", month) - 0.5) < 1e-12
    assert il.reconstructability([])["value"] == 0.0
    try:
        il.contextual_entropy([-1.0])
    except il.ValidationError:
        pass
    else:
        raise AssertionError("negative coherence accepted")


def clinical_handoff(data_dir):
    engine = il.Engine(data_dir=data_dir, background_scoring=False)
    engine.ingest_reference(GUIDELINE, "First line therapy is oral X for all adult patients")
    captured = engine.capture(
        {
            "subject": "Treatment plan for patient p-1042",
            "rationale": "Patient was previously non-responsive to X",
            "alternatives": [{"option": "Z", "reason_rejected": "Z was considered but unavailable"}],
            "assumptions": ["Allergy to Y rules it out"],
            "signals": [signal("historical", "prior course of X")],
            "actor": DOCTOR,
            "links": ["patient:p-1042", GUIDELINE],
        },
        idempotency_key="handoff-1",
    )
    assert captured["created"]
    trace_id = captured["trace"]["trace_id"]
    assert not engine.capture({"rationale": "ignored"}, idempotency_key="handoff-1")["created"]

    engine.ingest_reference(GUIDELINE, "Revised protocol recommends intravenous W when renal function declines")
    flags = engine.scan_for_drift()
    assert len(flags) == 1, flags
    assert flags[0]["message"] == il.REFERENCE_UPDATE_MESSAGE
    assert engine.scan_for_drift() == []
    assert engine.flags("open")[0]["original_rationale"] == "Patient was previously non-responsive to X"

    bundle = engine.regenerate("patient non-responsive to X", k=3)
    assert bundle["items"][0]["trace_id"] == trace_id
    assert bundle["items"][0]["open_flags"]

    resolved = engine.resolve_flag(
        flags[0]["flag_id"],
        "revised",
        REVIEWER,
        note="non-response to X was misclassified",
        revised_rationale="Earlier non-response to X was misclassified; start W",
    )
    assert resolved["version"]["seq"] == 2
    try:
        engine.resolve_flag(flags[0]["flag_id"], "accepted", REVIEWER)
    except il.ConflictError:
        pass
    else:
        raise AssertionError("second resolution accepted")

    lineage = engine.lineage(trace_id)
    assert [v["seq"] for v in lineage["versions"]] == [1, 2]
    assert engine.audit(trace_id)["reconstructability"]["value"] == 1.0
    assert engine.record_feedback(trace_id, 1.0, REVIEWER) == 1.0
    engine.refresh_scores()
    assert 0.0 <= engine.trace(trace_id)["score"]["utility"] <= 1.0
    try:
        engine.lineage("01ARZ3NDEKTSV4RRFFQ69G5FAV")
    except il.NotFoundError:
        pass
    else:
        raise AssertionError("unknown trace found")

    exported = os.path.join(data_dir, "export.jsonl")
    n = engine.export(exported)
    copy = il.Engine(background_scoring=False)
    assert copy.import_events(exported) == n
    assert copy.state_hash == engine.state_hash
    engine.shutdown()

    reopened = il.Engine(data_dir=data_dir, background_scoring=False)
    assert reopened.state_hash == copy.state_hash
    assert reopened.position == n


def main():
    pure_functions()
    with tempfile.TemporaryDirectory() as d:
        clinical_handoff(d)
    print("insight_layer smoke test passed")


if __name__ == "__main__":
    main()
