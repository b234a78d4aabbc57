from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from planaudit.actions import ActionType
from planaudit.auditor import CalibrationAccumulator, DriftTracker, Verdict, audit
from planaudit.buffer import DiscrepancyBuffer
from planaudit.guidelines import index_chunks, load_chunks
from planaudit.harness import (
    EmptyBuffer,
    EpisodeResult,
    FileCohort,
    NoEpisodes,
    ParetoPoint,
    RunConfig,
    Services,
    aggregate,
    pareto_frontier,
    run_ablation,
    run_buffer_replay,
    run_episode,
    run_single_config,
    select_cohort,
)
from planaudit.planner import ContextCache, ScriptedBackend, ScriptedPolicy

from .conftest import COHORT_DIR, GUIDELINES_JSON, make_plan
from .oracles import brier_ref, ece_ref, pareto_ref
from .test_buffer import entry_fixture

MANDATORY = [
    ActionType.FOLLOW_UP,
    ActionType.MEDICATION_RECONCILIATION,
    ActionType.PATIENT_EDUCATION,
    ActionType.SYMPTOM_MONITORING,
]

ACCEPTANCE_POLICY = ScriptedPolicy(
    include_prob={
        ActionType.FOLLOW_UP: 1.0,
        ActionType.MEDICATION_RECONCILIATION: 0.8,
        ActionType.PATIENT_EDUCATION: 0.54,
        ActionType.SYMPTOM_MONITORING: 0.54,
    },
    repair_prob=0.9,
    confidence_mean=0.88,
    confidence_spread=0.05,
)


def make_services(
    cfg: RunConfig,
    tmp_path: Path,
    policy: ScriptedPolicy = ACCEPTANCE_POLICY,
    with_buffer: bool = True,
    events: list | None = None,
) -> Services:
    run_dir = tmp_path / cfg.name
    sink = None
    if events is not None:
        sink = lambda event_type, payload: events.append((event_type, payload))
    return Services(
        cohort=FileCohort(COHORT_DIR),
        index=index_chunks(load_chunks(GUIDELINES_JSON)),
        backend=ScriptedBackend(policy, seed=cfg.seed),
        cache=ContextCache(),
        buffer=DiscrepancyBuffer(tmp_path / "buffer.jsonl") if with_buffer else None,
        run_dir=run_dir,
        event_sink=sink,
    )


def synthetic_results(spec: list[tuple[list[ActionType], float, float]]) -> list[EpisodeResult]:
    """Build audited EpisodeResults from (types, confidence, latency_ms) triples."""
    drift = DriftTracker()
    calib = CalibrationAccumulator()
    results = []
    for i, (types, confidence, latency_ms) in enumerate(spec):
        plan = make_plan(types, confidence=confidence, episode_id=f"ep-{i:03d}")
        record = audit(plan, drift, calib)
        results.append(
            EpisodeResult(
                episode_id=plan.episode_id,
                patient_id=f"p{i:03d}",
                config_name="baseline",
                snapshot_hash="0" * 16,
                plan=plan,
                audit=record,
                latency_ms=latency_ms,
            )
        )
    return results


# ---------------------------------------------------------------------------
# run_episode


def test_empty_bundle_skipped(tmp_path):
    cfg = RunConfig("baseline", seed=1)
    services = make_services(cfg, tmp_path)
    # An empty NDJSON patient: craft a cohort with a bare Patient resource.
    empty_dir = tmp_path / "empty_cohort"
    empty_dir.mkdir()
    (empty_dir / "p.ndjson").write_text(
        '{"resourceType": "Patient", "id": "lonely"}\n', encoding="utf-8"
    )
    services.cohort = FileCohort(empty_dir)
    result = run_episode(
        "lonely", cfg, services, drift=DriftTracker(), calib=CalibrationAccumulator()
    )
    assert result.skipped
    assert result.skip_reason == "empty_snapshot"
    assert result.plan is None and result.audit is None
    sample = json.loads((services.run_dir / "samples" / f"{result.episode_id}.json").read_text())
    assert sample["skipped"] is True


def test_full_coverage_episode_leaves_buffer_untouched(tmp_path):
    cfg = RunConfig("baseline", seed=1)
    services = make_services(cfg, tmp_path, policy=ScriptedPolicy())
    result = run_episode(
        "p001", cfg, services, drift=DriftTracker(), calib=CalibrationAccumulator()
    )
    assert not result.skipped
    assert result.audit.verdict is Verdict.PASS
    assert len(services.buffer) == 0


def test_high_conf_miss_appends_buffer_entry(tmp_path):
    policy = ScriptedPolicy(
        include_prob={
            ActionType.FOLLOW_UP: 1.0,
            ActionType.MEDICATION_RECONCILIATION: 1.0,
            ActionType.PATIENT_EDUCATION: 0.0,
            ActionType.SYMPTOM_MONITORING: 1.0,
        },
        confidence_mean=0.9,
    )
    cfg = RunConfig("baseline", seed=1)
    services = make_services(cfg, tmp_path, policy=policy)
    result = run_episode(
        "p001", cfg, services, drift=DriftTracker(), calib=CalibrationAccumulator()
    )
    assert result.audit.verdict is Verdict.FAIL
    assert result.audit.high_conf_error
    assert len(services.buffer) == 1
    entry = services.buffer.pending()[0]
    assert entry.missing == [ActionType.PATIENT_EDUCATION]


def test_unknown_patient_captured_not_raised(tmp_path):
    cfg = RunConfig("baseline", seed=1)
    services = make_services(cfg, tmp_path)
    result = run_episode(
        "ghost", cfg, services, drift=DriftTracker(), calib=CalibrationAccumulator()
    )
    assert result.skipped
    assert "fetch_error" in result.skip_reason


# ---------------------------------------------------------------------------
# aggregate


def test_aggregate_reference_fail_rate():
    # 33 FAIL / 17 PASS of 50 -> fail_rate 0.660 (reference baseline counts).
    spec = [(MANDATORY, 0.9, 1000.0)] * 17 + [(MANDATORY[:3], 0.9, 1000.0)] * 33
    summary = aggregate(synthetic_results(spec), 10)
    assert summary.n == 50
    assert summary.fail_rate == pytest.approx(0.660, abs=5e-4)
    assert summary.pass_count == 17
    assert summary.fail_count == 33


def test_aggregate_reference_coverage_rate():
    # 16/50 coverage_all -> 0.320 (reference baseline counts).
    spec = [(MANDATORY, 0.9, 1000.0)] * 16 + [(MANDATORY[:2], 0.9, 1000.0)] * 34
    summary = aggregate(synthetic_results(spec), 10)
    assert summary.coverage_all_rate == pytest.approx(0.320, abs=5e-4)


def test_aggregate_matches_straight_loop_recompute():
    rng = random.Random(5)
    spec = []
    for _ in range(60):
        types = [t for t in MANDATORY if rng.random() < 0.7]
        if rng.random() < 0.2:
            types.append(ActionType.OTHER)
        spec.append((types, round(rng.uniform(0.3, 1.0), 3), rng.uniform(500, 3000)))
    results = synthetic_results(spec)
    summary = aggregate(results, 10, run_wall_clock_s=120.0)

    n = len(results)
    pairs = [
        (r.plan.confidence, 1 if r.audit.coverage.coverage_all else 0) for r in results
    ]
    assert summary.n == n
    assert summary.coverage_all_rate == pytest.approx(
        sum(y for _p, y in pairs) / n, abs=1e-12
    )
    assert summary.brier == pytest.approx(brier_ref(pairs), abs=1e-12)
    assert summary.ece == pytest.approx(ece_ref(pairs, 10), abs=1e-12)
    assert summary.fail_rate == pytest.approx(
        sum(1 for r in results if r.audit.verdict is Verdict.FAIL) / n, abs=1e-12
    )
    assert summary.high_conf_error_rate == pytest.approx(
        sum(1 for r in results if r.audit.high_conf_error) / n, abs=1e-12
    )
    assert summary.mean_drift_l1 == pytest.approx(
        sum(r.audit.drift_l1 for r in results) / n, abs=1e-12
    )
    assert summary.avg_confidence == pytest.approx(
        sum(r.plan.confidence for r in results) / n, abs=1e-12
    )
    assert summary.mean_latency_s == pytest.approx(
        sum(r.latency_ms for r in results) / n / 1000.0, abs=1e-12
    )
    assert summary.episodes_per_min == pytest.approx(n / 2.0, abs=1e-12)
    assert summary.pass_count + summary.fail_count == n
    for action_type in MANDATORY:
        expected = sum(
            1 for r in results if action_type in r.audit.coverage.missing
        )
        from planaudit.actions import CATEGORY_DISPLAY

        assert summary.violation_counts[CATEGORY_DISPLAY[action_type]] == expected


def test_aggregate_rejects_all_skipped():
    result = EpisodeResult(
        episode_id="e", patient_id="p", config_name="baseline",
        skipped=True, skip_reason="empty_snapshot",
    )
    with pytest.raises(NoEpisodes):
        aggregate([result], 10)


def test_aggregate_skipped_excluded_from_rates():
    spec = [(MANDATORY, 0.9, 1000.0)] * 10
    results = synthetic_results(spec)
    results.append(
        EpisodeResult(
            episode_id="skip", patient_id="p", config_name="baseline",
            skipped=True, skip_reason="empty_snapshot",
        )
    )
    summary = aggregate(results, 10)
    assert summary.n == 10
    assert summary.coverage_all_rate == 1.0


# ---------------------------------------------------------------------------
# run_single_config / run_ablation


def test_cohort_selection_deterministic():
    cohort = FileCohort(COHORT_DIR)
    ids = select_cohort(cohort, 50)
    assert len(ids) == 50
    assert ids == select_cohort(FileCohort(COHORT_DIR), 50)
    assert ids == sorted(ids)


def test_run_single_config_shape(tmp_path):
    cfg = RunConfig("baseline", seed=7, patient_limit=20)
    services = make_services(cfg, tmp_path)
    ids = select_cohort(services.cohort, cfg.patient_limit)
    summary, results = run_single_config(cfg, services, ids)
    assert summary.n == 20
    assert len(results) == 20
    assert (services.run_dir / "summary.json").exists()
    assert len(list((services.run_dir / "samples").glob("*.json"))) == 20


def test_events_emitted_two_n_plus_one(tmp_path):
    events: list = []
    cfg = RunConfig("baseline", seed=7, patient_limit=10)
    services = make_services(cfg, tmp_path, events=events)
    ids = select_cohort(services.cohort, cfg.patient_limit)
    run_single_config(cfg, services, ids)
    assert len(events) == 2 * 10 + 1
    assert events[-1][0] == "run_completed"
    assert [e[0] for e in events[:-1]].count("episode_started") == 10


def test_ablation_four_configs_same_cohort(tmp_path):
    configs = [
        RunConfig(name, seed=7, patient_limit=15)
        for name in ("baseline", "context_cache", "self_improve", "cache_and_self_improve")
    ]
    summaries = run_ablation(
        configs, lambda cfg: make_services(cfg, tmp_path)
    )
    assert [s.config_name for s in summaries] == [c.name for c in configs]
    assert all(s.n == 15 for s in summaries)
    # Paired cohort: identical patient ids across configs.
    episode_files = [
        sorted(p.name.split("-", 2)[2] for p in (tmp_path / c.name / "samples").glob("*.json"))
        for c in configs
    ]
    assert all(files == episode_files[0] for files in episode_files)


def test_self_improve_beats_baseline_coverage(tmp_path):
    configs = [
        RunConfig("baseline", seed=7, patient_limit=30),
        RunConfig("self_improve", seed=7, patient_limit=30),
    ]
    summaries = run_ablation(configs, lambda cfg: make_services(cfg, tmp_path))
    baseline, improved = summaries
    assert improved.coverage_all_rate >= baseline.coverage_all_rate


def test_run_determinism_byte_identical(tmp_path):
    def run_once(out: Path) -> dict[str, bytes]:
        configs = [
            RunConfig(name, seed=7, patient_limit=12)
            for name in ("baseline", "self_improve")
        ]
        run_ablation(configs, lambda cfg: make_services(cfg, out))
        return {
            str(p.relative_to(out)): p.read_bytes()
            for p in sorted(out.rglob("*.json"))
            if "buffer" not in p.name
        }

    first = run_once(tmp_path / "a")
    second = run_once(tmp_path / "b")
    assert first == second


# ---------------------------------------------------------------------------
# run_buffer_replay


def test_replay_empty_buffer_raises(tmp_path):
    cfg = RunConfig("buffer_replay", seed=7)
    services = make_services(cfg, tmp_path)
    with pytest.raises(EmptyBuffer):
        run_buffer_replay(services.buffer, cfg, services)


def seeded_buffer(tmp_path: Path, count: int = 7) -> DiscrepancyBuffer:
    store = DiscrepancyBuffer(tmp_path / "seeded.jsonl")
    for i in range(1, count + 1):
        entry = entry_fixture(i, created_at=f"2024-01-01T00:{i:02d}:00Z")
        entry.patient_id = f"p{i:03d}"  # resolvable in the fixture cohort
        store.append(entry)
    return store


def test_replay_seven_pending_full_repair(tmp_path):
    store = seeded_buffer(tmp_path, 7)
    cfg = RunConfig("buffer_replay", seed=7)
    policy = ScriptedPolicy(repair_prob=1.0, confidence_mean=0.9)
    services = make_services(cfg, tmp_path, policy=policy, with_buffer=False)
    services.buffer = None
    summary = run_buffer_replay(store, cfg, services)
    assert summary.n == 7
    assert summary.coverage_all_rate == 1.0
    assert summary.fail_rate == 0.0
    assert store.pending() == []
    for entry in store.all_entries():
        assert entry.replayed
        assert entry.replay_outcome.coverage_all


def test_replay_zero_repair_all_fail(tmp_path):
    store = seeded_buffer(tmp_path, 5)
    cfg = RunConfig("buffer_replay", seed=7)
    policy = ScriptedPolicy(repair_prob=0.0, confidence_mean=0.9)
    services = make_services(cfg, tmp_path, policy=policy)
    services.buffer = None
    summary = run_buffer_replay(store, cfg, services)
    assert summary.n == 5
    assert summary.coverage_all_rate == 0.0
    assert summary.fail_rate == 1.0
    assert store.pending() == []
    for entry in store.all_entries():
        assert entry.replayed
        assert entry.replay_outcome.coverage_all is False


# ---------------------------------------------------------------------------
# pareto_frontier


REFERENCE_POINTS = [
    ("baseline", 0.32, 17.42),
    ("context_cache", 0.52, 11.83),
    ("self_improve", 0.86, 19.65),
    ("cache_and_self_improve", 0.86, 18.70),
    ("buffer_replay", 1.00, 27.78),
]


def test_pareto_reproduces_reference_frontier():
    points = [ParetoPoint(n, c, l) for n, c, l in REFERENCE_POINTS]
    frontier = pareto_frontier(points)
    assert [p.config_name for p in frontier] == [
        "context_cache",
        "cache_and_self_improve",
        "buffer_replay",
    ]
    dominated = {p.config_name for p in points if p.dominated}
    assert dominated == {"baseline", "self_improve"}


def test_pareto_single_point():
    point = ParetoPoint("only", 0.5, 10.0)
    assert pareto_frontier([point]) == [point]
    assert not point.dominated


def test_pareto_matches_brute_force_randomized():
    rng = random.Random(99)
    for _ in range(200):
        n = rng.randint(1, 12)
        triples = [
            (f"cfg{i}", round(rng.uniform(0, 1), 2), round(rng.uniform(5, 30), 2))
            for i in range(n)
        ]
        points = [ParetoPoint(name, cov, lat) for name, cov, lat in triples]
        frontier = pareto_frontier(points)
        expected = pareto_ref(triples)
        assert {p.config_name for p in frontier} == expected
        # Union of frontier and dominated equals input; no dominated in frontier.
        assert {p.config_name for p in points if p.dominated} | expected == {
            name for name, _c, _l in triples
        }
        latencies = [p.mean_latency_s for p in frontier]
        assert latencies == sorted(latencies)
