"""Deterministic plan auditor: coverage, calibration, drift, PASS/FAIL verdicts.

The auditor is observational only. It never blocks or mutates a plan; it
scores what the planner produced and routes the signal (verdict, violations,
high-confidence-error flag, triage lane) downstream.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .actions import CATEGORY_DISPLAY, MANDATORY_TYPES, ActionPlan, ActionType


class EmptyRecords(ValueError):
    """Raised when a calibration metric is asked for zero records."""


class InvalidDistribution(ValueError):
    """Raised when a drift input does not sum to 1 over the action-type domain."""


class Verdict(Enum):
    PASS = "PASS"
    FAIL = "FAIL"


class Lane(Enum):
    GREEN = "Green"
    YELLOW = "Yellow"
    RED = "Red"


@dataclass
class CoverageReport:
    has_follow_up: bool
    has_meds: bool
    has_education: bool
    has_monitoring: bool
    coverage_all: bool
    missing: list[ActionType]

    def to_dict(self) -> dict[str, Any]:
        return {
            "has_follow_up": self.has_follow_up,
            "has_meds": self.has_meds,
            "has_education": self.has_education,
            "has_monitoring": self.has_monitoring,
            "coverage_all": self.coverage_all,
            "missing": [t.value for t in self.missing],
        }


@dataclass
class CalibrationRecord:
    p: float
    y: int


@dataclass
class CalibrationAccumulator:
    bin_count: int = 10
    records: list[CalibrationRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.bin_count < 1:
            raise ValueError("bin_count must be >= 1")

    def append(self, record: CalibrationRecord) -> None:
        self.records.append(record)


@dataclass
class DriftTracker:
    warn_threshold: float = 0.4
    cumulative_counts: dict[ActionType, int] = field(
        default_factory=lambda: {t: 0 for t in ActionType}
    )
    episode_l1: list[float] = field(default_factory=list)

    def reference_distribution(self) -> dict[ActionType, float] | None:
        total = sum(self.cumulative_counts.values())
        if total == 0:
            return None
        return {t: self.cumulative_counts[t] / total for t in ActionType}

    def fold(self, counts: dict[ActionType, int]) -> None:
        for action_type, count in counts.items():
            self.cumulative_counts[action_type] += count


@dataclass
class AuditRecord:
    episode_id: str
    verdict: Verdict
    violations: list[str]
    coverage: CoverageReport
    confidence: float
    high_conf_error: bool
    drift_l1: float
    drift_warning: bool
    buffer_flag: bool
    lane: Lane

    def to_dict(self) -> dict[str, Any]:
        return {
            "episode_id": self.episode_id,
            "verdict": self.verdict.value,
            "violations": list(self.violations),
            "coverage": self.coverage.to_dict(),
            "confidence": self.confidence,
            "high_conf_error": self.high_conf_error,
            "drift_l1": self.drift_l1,
            "drift_warning": self.drift_warning,
            "buffer_flag": self.buffer_flag,
            "lane": self.lane.value,
        }


def check_coverage(plan: ActionPlan) -> CoverageReport:
    """Presence check for the four mandatory categories."""
    present = plan.covered_types()
    missing = [t for t in MANDATORY_TYPES if t not in present]
    return CoverageReport(
        has_follow_up=ActionType.FOLLOW_UP in present,
        has_meds=ActionType.MEDICATION_RECONCILIATION in present,
        has_education=ActionType.PATIENT_EDUCATION in present,
        has_monitoring=ActionType.SYMPTOM_MONITORING in present,
        coverage_all=not missing,
        missing=missing,
    )


def coverage_violations(report: CoverageReport) -> list[str]:
    return [f"Plan is missing {CATEGORY_DISPLAY[t]}" for t in report.missing]


def brier(records: Sequence[CalibrationRecord]) -> float:
    """Mean squared error between confidence and the binary correctness proxy."""
    if not records:
        raise EmptyRecords("brier requires at least one record")
    return sum((r.p - r.y) ** 2 for r in records) / len(records)


def _bin_index(p: float, boundaries: list[float]) -> int:
    """Bin b in 1..B for intervals ((b-1)/B, b/B]; p == 0 goes to bin 1.

    bisect_left finds the first boundary >= p, i.e. the interval whose upper
    edge contains p. Comparison happens against the exact floats b/B so an
    independent loop using the same boundaries agrees on every input.
    """
    if p <= 0.0:
        return 1
    return bisect_left(boundaries, p) + 1


def ece(records: Sequence[CalibrationRecord], bin_count: int = 10) -> float:
    """Expected calibration error with bin-center confidence.

    Bins are ((b-1)/B, b/B]; conf_b is the bin midpoint (b-0.5)/B; empty bins
    contribute nothing.
    """
    if not records:
        raise EmptyRecords("ece requires at least one record")
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    boundaries = [b / bin_count for b in range(1, bin_count + 1)]
    totals = [0] * bin_count
    hits = [0] * bin_count
    for record in records:
        b = _bin_index(record.p, boundaries) - 1
        totals[b] += 1
        hits[b] += record.y
    n = len(records)
    value = 0.0
    for b in range(bin_count):
        if totals[b] == 0:
            continue
        acc = hits[b] / totals[b]
        conf = (b + 0.5) / bin_count
        value += (totals[b] / n) * abs(acc - conf)
    return value


def ece_meanconf(records: Sequence[CalibrationRecord], bin_count: int = 10) -> float:
    """Secondary diagnostic: ECE with conf_b = mean confidence inside the bin."""
    if not records:
        raise EmptyRecords("ece requires at least one record")
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    boundaries = [b / bin_count for b in range(1, bin_count + 1)]
    totals = [0] * bin_count
    hits = [0] * bin_count
    conf_sums = [0.0] * bin_count
    for record in records:
        b = _bin_index(record.p, boundaries) - 1
        totals[b] += 1
        hits[b] += record.y
        conf_sums[b] += record.p
    n = len(records)
    value = 0.0
    for b in range(bin_count):
        if totals[b] == 0:
            continue
        acc = hits[b] / totals[b]
        conf = conf_sums[b] / totals[b]
        value += (totals[b] / n) * abs(acc - conf)
    return value


def l1_drift(
    current: dict[ActionType, float], reference: dict[ActionType, float]
) -> float:
    """L1 distance between two distributions over the 5-value action-type domain.

    fsum gives the correctly rounded total independent of term order, which
    keeps boundary comparisons against the warning threshold faithful.
    """
    for name, dist in (("current", current), ("reference", reference)):
        total = math.fsum(dist.get(t, 0.0) for t in ActionType)
        if abs(total - 1.0) > 1e-9:
            raise InvalidDistribution(f"{name} distribution sums to {total!r}, not 1")
    return math.fsum(abs(current.get(t, 0.0) - reference.get(t, 0.0)) for t in ActionType)


def triage_lane(verdict: Verdict, confidence: float, conf_threshold: float = 0.8) -> Lane:
    """Green on PASS; FAIL splits into Yellow (low conf) and Red (high conf)."""
    if verdict is Verdict.PASS:
        return Lane.GREEN
    return Lane.RED if confidence >= conf_threshold else Lane.YELLOW


def audit(
    plan: ActionPlan,
    drift: DriftTracker,
    calib: CalibrationAccumulator,
    conf_threshold: float = 0.8,
) -> AuditRecord:
    """Score one plan and fold its action counts into the run's trackers.

    Episode drift is measured against the tracker's pre-update cumulative
    reference (first episode: 0), then this episode's counts are folded in.
    """
    coverage = check_coverage(plan)
    violations = coverage_violations(coverage)
    verdict = Verdict.PASS if coverage.coverage_all else Verdict.FAIL

    calib.append(CalibrationRecord(p=plan.confidence, y=1 if coverage.coverage_all else 0))

    counts = plan.type_counts()
    total_actions = sum(counts.values())
    reference = drift.reference_distribution()
    if reference is None or total_actions == 0:
        drift_value = 0.0
    else:
        episode_dist = {t: counts[t] / total_actions for t in ActionType}
        drift_value = l1_drift(episode_dist, reference)
    drift.episode_l1.append(drift_value)
    if total_actions:
        drift.fold(counts)

    high_conf_error = plan.confidence >= conf_threshold and not coverage.coverage_all
    return AuditRecord(
        episode_id=plan.episode_id,
        verdict=verdict,
        violations=violations,
        coverage=coverage,
        confidence=plan.confidence,
        high_conf_error=high_conf_error,
        drift_l1=drift_value,
        drift_warning=drift_value > drift.warn_threshold,
        buffer_flag=high_conf_error,
        lane=triage_lane(verdict, plan.confidence, conf_threshold),
    )


def records_from_pairs(pairs: Iterable[tuple[float, int]]) -> list[CalibrationRecord]:
    return [CalibrationRecord(p=p, y=y) for p, y in pairs]
