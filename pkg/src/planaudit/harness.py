"""Simulation harness: per-episode loop, ablation runs, aggregation, Pareto.

Each episode executes the five-step pipeline (fetch, snapshot, plan, audit,
log) for one patient. An ablation run executes the same cohort order under
each configuration with fresh trackers, emits per-sample JSON logs and a
per-config summary, and the combined comparison reports.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

from .actions import CATEGORY_DISPLAY, MANDATORY_TYPES, ActionPlan, ActionType
from .auditor import (
    AuditRecord,
    CalibrationAccumulator,
    CalibrationRecord,
    DriftTracker,
    Verdict,
    brier,
    ece,
    ece_meanconf,
)
from .auditor import audit as audit_plan
from .buffer import DiscrepancyBuffer, ReplayOutcome, RunMetadata, flag
from .canonical import dump_json
from .fhir import ActiveFilterPolicy, PatientBundle, filter_active
from .guidelines import RetrievalIndex
from .planner import (
    BackendError,
    ContextCache,
    PlannerBackend,
    PlannerConfig,
    PlanParseError,
    plan_episode,
)
from .snapshot import PatientSnapshot, is_eligible, summarize

logger = logging.getLogger(__name__)

SAMPLE_SCHEMA_VERSION = 1

CONFIG_NAMES = (
    "baseline",
    "context_cache",
    "self_improve",
    "cache_and_self_improve",
    "buffer_replay",
)

# name -> (enable_cache, enable_self_improve)
CONFIG_FLAGS: dict[str, tuple[bool, bool]] = {
    "baseline": (False, False),
    "context_cache": (True, False),
    "self_improve": (False, True),
    "cache_and_self_improve": (True, True),
    "buffer_replay": (True, True),
}


class EmptyBuffer(RuntimeError):
    """Nothing to replay."""


class NoEpisodes(ValueError):
    """aggregate() needs at least one non-skipped episode."""


@dataclass
class RunConfig:
    name: str
    seed: int = 0
    patient_limit: int = 50
    conf_threshold: float = 0.8
    drift_threshold: float = 0.4
    bin_count: int = 10
    worker_count: int = 1
    max_refine_iterations: int = 1
    confidence_default: float = 0.5
    retrieval_k: int = 3

    def __post_init__(self) -> None:
        if self.name not in CONFIG_FLAGS:
            raise ValueError(f"unknown config name {self.name!r}")

    @property
    def enable_cache(self) -> bool:
        return CONFIG_FLAGS[self.name][0]

    @property
    def enable_self_improve(self) -> bool:
        return CONFIG_FLAGS[self.name][1]

    @property
    def run_id(self) -> str:
        return f"{self.name}-s{self.seed}"

    def planner_config(self) -> PlannerConfig:
        return PlannerConfig(
            enable_self_improve=self.enable_self_improve,
            enable_cache=self.enable_cache,
            max_refine_iterations=self.max_refine_iterations,
            confidence_default=self.confidence_default,
            retrieval_k=self.retrieval_k,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "patient_limit": self.patient_limit,
            "conf_threshold": self.conf_threshold,
            "drift_threshold": self.drift_threshold,
            "bin_count": self.bin_count,
            "worker_count": self.worker_count,
            "max_refine_iterations": self.max_refine_iterations,
            "confidence_default": self.confidence_default,
            "retrieval_k": self.retrieval_k,
            "enable_cache": self.enable_cache,
            "enable_self_improve": self.enable_self_improve,
        }


class CohortSource(Protocol):
    def patient_ids(self) -> list[str]: ...

    def bundle(self, patient_id: str) -> PatientBundle: ...


class FileCohort:
    """Cohort backed by NDJSON files; bundles come pre-filtered."""

    def __init__(self, path: str | Path, policy: ActiveFilterPolicy | None = None):
        from .fhir import assemble_bundles, load_ndjson

        self.policy = policy or ActiveFilterPolicy()
        resources, self.load_warnings = load_ndjson(path)
        bundles, assembly_warnings = assemble_bundles(resources)
        self.load_warnings.extend(assembly_warnings)
        self._bundles = {b.patient_id: filter_active(b, self.policy) for b in bundles}
        self._ids = sorted(self._bundles)

    def patient_ids(self) -> list[str]:
        return list(self._ids)

    def bundle(self, patient_id: str) -> PatientBundle:
        try:
            return self._bundles[patient_id]
        except KeyError:
            raise KeyError(f"patient {patient_id!r} not in cohort") from None


class RestCohort:
    """Cohort backed by a FHIR R4 server."""

    def __init__(
        self,
        base_url: str,
        policy: ActiveFilterPolicy | None = None,
        *,
        timeout_seconds: float = 30.0,
        bearer_token: str | None = None,
    ):
        from .fhir_client import FhirClient

        self.policy = policy or ActiveFilterPolicy()
        self._client = FhirClient(
            base_url, timeout_seconds=timeout_seconds, bearer_token=bearer_token
        )

    def patient_ids(self) -> list[str]:
        return self._client.list_patient_ids()

    def bundle(self, patient_id: str) -> PatientBundle:
        return filter_active(self._client.fetch_patient_bundle(patient_id), self.policy)


EventSink = Callable[[str, dict[str, Any]], None]


@dataclass
class Services:
    """Everything run_episode needs, wired once per run."""

    cohort: CohortSource
    index: RetrievalIndex
    backend: PlannerBackend
    cache: ContextCache
    buffer: DiscrepancyBuffer | None
    run_dir: Path | None
    event_sink: EventSink | None = None
    # Serializes tracker folds and buffer writes when worker_count > 1.
    audit_lock: threading.Lock = field(default_factory=threading.Lock)

    def emit(self, event_type: str, payload: dict[str, Any]) -> None:
        if self.event_sink is not None:
            self.event_sink(event_type, payload)


@dataclass
class EpisodeResult:
    episode_id: str
    patient_id: str
    config_name: str
    snapshot_hash: str = ""
    plan: ActionPlan | None = None
    audit: AuditRecord | None = None
    latency_ms: float = 0.0
    cache_hit: bool = False
    refine_iterations: int = 0
    skipped: bool = False
    skip_reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        # Canonical per-sample schema; key order is the documented order.
        return {
            "schema_version": SAMPLE_SCHEMA_VERSION,
            "episode_id": self.episode_id,
            "patient_id": self.patient_id,
            "config_name": self.config_name,
            "snapshot_hash": self.snapshot_hash,
            "plan": self.plan.to_dict() if self.plan else None,
            "audit": self.audit.to_dict() if self.audit else None,
            "latency_ms": self.latency_ms,
            "cache_hit": self.cache_hit,
            "refine_iterations": self.refine_iterations,
            "skipped": self.skipped,
            "skip_reason": self.skip_reason,
        }


@dataclass
class RunSummary:
    config_name: str
    n: int
    coverage_all_rate: float
    rate_follow_up: float
    rate_meds: float
    rate_education: float
    rate_monitoring: float
    brier: float
    ece: float
    ece_meanconf: float
    fail_rate: float
    high_conf_error_rate: float
    mean_drift_l1: float
    avg_confidence: float
    mean_latency_s: float
    episodes_per_min: float
    pass_count: int
    fail_count: int
    violation_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_name": self.config_name,
            "n": self.n,
            "coverage_all_rate": self.coverage_all_rate,
            "rate_follow_up": self.rate_follow_up,
            "rate_meds": self.rate_meds,
            "rate_education": self.rate_education,
            "rate_monitoring": self.rate_monitoring,
            "brier": self.brier,
            "ece": self.ece,
            "ece_meanconf": self.ece_meanconf,
            "fail_rate": self.fail_rate,
            "high_conf_error_rate": self.high_conf_error_rate,
            "mean_drift_l1": self.mean_drift_l1,
            "avg_confidence": self.avg_confidence,
            "mean_latency_s": self.mean_latency_s,
            "episodes_per_min": self.episodes_per_min,
            "pass_count": self.pass_count,
            "fail_count": self.fail_count,
            "violation_counts": dict(self.violation_counts),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "RunSummary":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__})


@dataclass
class ParetoPoint:
    config_name: str
    coverage_all_rate: float
    mean_latency_s: float
    dominated: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_name": self.config_name,
            "coverage_all_rate": self.coverage_all_rate,
            "mean_latency_s": self.mean_latency_s,
            "dominated": self.dominated,
        }


def select_cohort(source: CohortSource, limit: int) -> list[str]:
    """First `limit` eligible patients in deterministic bundle order."""
    selected: list[str] = []
    for patient_id in source.patient_ids():
        bundle = source.bundle(patient_id)
        if is_eligible(summarize(bundle)):
            selected.append(patient_id)
            if len(selected) >= limit:
                break
    return selected


def _write_sample(run_dir: Path | None, result: EpisodeResult) -> None:
    if run_dir is None:
        return
    samples_dir = run_dir / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    (samples_dir / f"{result.episode_id}.json").write_text(
        dump_json(result.to_dict()), encoding="utf-8"
    )


def run_episode(
    patient_id: str,
    cfg: RunConfig,
    services: Services,
    *,
    drift: DriftTracker,
    calib: CalibrationAccumulator,
    episode_seq: int = 0,
    replay_hints: tuple[str, list[ActionType]] | None = None,
) -> EpisodeResult:
    """One full pipeline pass; episode-level errors never abort the run."""
    episode_id = f"{cfg.name}-{episode_seq:03d}-{patient_id}"
    services.emit("episode_started", {"episode_id": episode_id, "patient_id": patient_id})
    result = EpisodeResult(
        episode_id=episode_id, patient_id=patient_id, config_name=cfg.name
    )
    started = time.perf_counter()

    try:
        bundle = services.cohort.bundle(patient_id)
        snapshot: PatientSnapshot = summarize(bundle)
        result.snapshot_hash = snapshot.content_hash
        if not is_eligible(snapshot):
            result.skipped = True
            result.skip_reason = "empty_snapshot"
            return result

        plan, telemetry = plan_episode(
            snapshot,
            services.index,
            services.cache,
            services.backend,
            cfg.planner_config(),
            episode_id=episode_id,
            replay_hints=replay_hints,
        )
        result.plan = plan
        result.cache_hit = telemetry.cache_hit
        result.refine_iterations = telemetry.refine_iterations

        with services.audit_lock:
            audit_record = audit_plan(plan, drift, calib, cfg.conf_threshold)
            result.audit = audit_record
            if services.buffer is not None:
                entry = flag(
                    audit_record,
                    plan,
                    RunMetadata(
                        run_id=cfg.run_id, config_name=cfg.name, patient_id=patient_id
                    ),
                )
                if entry is not None:
                    services.buffer.append(entry)

        if telemetry.simulated_latency_ms is not None:
            result.latency_ms = telemetry.simulated_latency_ms
        else:
            result.latency_ms = (time.perf_counter() - started) * 1000.0
        return result
    except (BackendError, PlanParseError) as exc:
        result.skipped = True
        result.skip_reason = f"planner_error: {exc}"
        return result
    except KeyError as exc:
        result.skipped = True
        result.skip_reason = f"fetch_error: {exc}"
        return result
    except Exception as exc:  # capture-all: an episode never aborts the run
        logger.exception("episode %s failed", episode_id)
        result.skipped = True
        result.skip_reason = f"error: {type(exc).__name__}: {exc}"
        return result
    finally:
        if result.skipped:
            result.latency_ms = 0.0
        _write_sample(services.run_dir, result)
        digest: dict[str, Any] = {
            "episode_id": episode_id,
            "patient_id": patient_id,
            "skipped": result.skipped,
        }
        if result.audit is not None:
            digest.update(
                verdict=result.audit.verdict.value,
                lane=result.audit.lane.value,
                coverage_all=result.audit.coverage.coverage_all,
                confidence=result.audit.confidence,
                drift_l1=result.audit.drift_l1,
            )
        services.emit("episode_completed", digest)


def aggregate(
    results: list[EpisodeResult],
    bin_count: int = 10,
    *,
    run_wall_clock_s: float | None = None,
) -> RunSummary:
    """Fold episode results into a RunSummary; rates over non-skipped episodes."""
    live = [r for r in results if not r.skipped]
    if not live:
        raise NoEpisodes("no non-skipped episodes to aggregate")
    n = len(live)

    def rate(predicate: Callable[[EpisodeResult], bool]) -> float:
        return sum(1 for r in live if predicate(r)) / n

    records = [
        CalibrationRecord(
            p=r.plan.confidence, y=1 if r.audit.coverage.coverage_all else 0
        )
        for r in live
        if r.plan is not None and r.audit is not None
    ]
    pass_count = sum(1 for r in live if r.audit and r.audit.verdict is Verdict.PASS)
    fail_count = n - pass_count

    violation_counts: dict[str, int] = {
        CATEGORY_DISPLAY[t]: 0 for t in MANDATORY_TYPES
    }
    for r in live:
        if r.audit is None:
            continue
        for missing_type in r.audit.coverage.missing:
            violation_counts[CATEGORY_DISPLAY[missing_type]] += 1

    if run_wall_clock_s is None:
        run_wall_clock_s = sum(r.latency_ms for r in live) / 1000.0
    episodes_per_min = n / (run_wall_clock_s / 60.0) if run_wall_clock_s > 0 else 0.0

    return RunSummary(
        config_name=live[0].config_name,
        n=n,
        coverage_all_rate=rate(lambda r: bool(r.audit and r.audit.coverage.coverage_all)),
        rate_follow_up=rate(lambda r: bool(r.audit and r.audit.coverage.has_follow_up)),
        rate_meds=rate(lambda r: bool(r.audit and r.audit.coverage.has_meds)),
        rate_education=rate(lambda r: bool(r.audit and r.audit.coverage.has_education)),
        rate_monitoring=rate(lambda r: bool(r.audit and r.audit.coverage.has_monitoring)),
        brier=brier(records),
        ece=ece(records, bin_count),
        ece_meanconf=ece_meanconf(records, bin_count),
        fail_rate=fail_count / n,
        high_conf_error_rate=rate(lambda r: bool(r.audit and r.audit.high_conf_error)),
        mean_drift_l1=sum(r.audit.drift_l1 for r in live if r.audit) / n,
        avg_confidence=sum(r.plan.confidence for r in live if r.plan) / n,
        mean_latency_s=sum(r.latency_ms for r in live) / n / 1000.0,
        episodes_per_min=episodes_per_min,
        pass_count=pass_count,
        fail_count=fail_count,
        violation_counts=violation_counts,
    )


def _write_summary(run_dir: Path | None, summary: RunSummary, cfg: RunConfig) -> None:
    if run_dir is None:
        return
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = summary.to_dict()
    payload["config"] = cfg.to_dict()
    (run_dir / "summary.json").write_text(dump_json(payload), encoding="utf-8")


def run_single_config(
    cfg: RunConfig,
    services: Services,
    cohort_ids: list[str],
) -> tuple[RunSummary, list[EpisodeResult]]:
    """Execute one configuration over a fixed cohort order."""
    drift = DriftTracker(warn_threshold=cfg.drift_threshold)
    calib = CalibrationAccumulator(bin_count=cfg.bin_count)
    wall_started = time.perf_counter()

    results: list[EpisodeResult] = []
    if cfg.worker_count <= 1:
        for seq, patient_id in enumerate(cohort_ids):
            results.append(
                run_episode(
                    patient_id, cfg, services,
                    drift=drift, calib=calib, episode_seq=seq,
                )
            )
    else:
        # Planning is parallel; tracker folds happen inside run_episode in
        # completion order, serialized by submission through the executor
        # map's ordered consumption. Drift values may then depend on
        # completion order; everything else is order-invariant.
        with ThreadPoolExecutor(max_workers=cfg.worker_count) as pool:
            futures = [
                pool.submit(
                    run_episode, patient_id, cfg, services,
                    drift=drift, calib=calib, episode_seq=seq,
                )
                for seq, patient_id in enumerate(cohort_ids)
            ]
            results = [f.result() for f in futures]

    wall_clock_s = time.perf_counter() - wall_started
    simulated = [r.latency_ms for r in results if not r.skipped]
    if getattr(services.backend, "last_simulated_latency_ms", None) is not None:
        wall_clock_s = sum(simulated) / 1000.0

    summary = aggregate(results, cfg.bin_count, run_wall_clock_s=wall_clock_s)
    _write_summary(services.run_dir, summary, cfg)
    services.emit("run_completed", {"run_id": cfg.run_id, "n": summary.n})
    return summary, results


def run_ablation(
    configs: list[RunConfig],
    make_services: Callable[[RunConfig], Services],
    *,
    cohort_ids: list[str] | None = None,
) -> list[RunSummary]:
    """Run several configurations over the identical cohort order."""
    if not configs:
        raise ValueError("configs must be non-empty")
    summaries: list[RunSummary] = []
    for cfg in configs:
        services = make_services(cfg)
        ids = cohort_ids
        if ids is None:
            ids = select_cohort(services.cohort, cfg.patient_limit)
        summary, _results = run_single_config(cfg, services, ids)
        summaries.append(summary)
    return summaries


def run_buffer_replay(
    store: DiscrepancyBuffer,
    cfg: RunConfig,
    services: Services,
) -> RunSummary:
    """Replay all pending buffer entries with self-improve + cache + hints."""
    pending = store.pending()
    if not pending:
        raise EmptyBuffer("no pending discrepancy entries")

    drift = DriftTracker(warn_threshold=cfg.drift_threshold)
    calib = CalibrationAccumulator(bin_count=cfg.bin_count)
    results: list[EpisodeResult] = []
    for seq, entry in enumerate(pending):
        prior_wire = {
            "actions": entry.plan.get("actions", []),
            "confidence": entry.plan.get("confidence"),
        }
        hints = (json.dumps(prior_wire), list(entry.missing))
        result = run_episode(
            entry.patient_id, cfg, services,
            drift=drift, calib=calib, episode_seq=seq, replay_hints=hints,
        )
        results.append(result)
        if result.audit is not None:
            store.mark_replayed(
                entry.entry_id,
                ReplayOutcome(
                    coverage_all=result.audit.coverage.coverage_all, run_id=cfg.run_id
                ),
            )

    wall_clock_s = sum(r.latency_ms for r in results if not r.skipped) / 1000.0
    summary = aggregate(results, cfg.bin_count, run_wall_clock_s=wall_clock_s)
    _write_summary(services.run_dir, summary, cfg)
    services.emit("run_completed", {"run_id": cfg.run_id, "n": summary.n})
    return summary


def pareto_frontier(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Nondominated points (coverage up, latency down), sorted by latency.

    A point is dominated when another has coverage >= and latency <= with at
    least one strict. The `dominated` flag is set on every input point.
    """
    if not points:
        raise ValueError("points must be non-empty")
    for point in points:
        point.dominated = any(
            other.coverage_all_rate >= point.coverage_all_rate
            and other.mean_latency_s <= point.mean_latency_s
            and (
                other.coverage_all_rate > point.coverage_all_rate
                or other.mean_latency_s < point.mean_latency_s
            )
            for other in points
            if other is not point
        )
    frontier = [p for p in points if not p.dominated]
    frontier.sort(key=lambda p: (p.mean_latency_s, -p.coverage_all_rate, p.config_name))
    return frontier
