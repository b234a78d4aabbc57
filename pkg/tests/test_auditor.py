from __future__ import annotations

import itertools
from copy import deepcopy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planaudit.actions import ActionType
from planaudit.auditor import (
    CalibrationAccumulator,
    CalibrationRecord,
    DriftTracker,
    EmptyRecords,
    InvalidDistribution,
    Lane,
    Verdict,
    audit,
    brier,
    check_coverage,
    coverage_violations,
    ece,
    ece_meanconf,
    l1_drift,
    records_from_pairs,
    triage_lane,
)

from .conftest import make_plan
from .oracles import brier_ref, ece_meanconf_ref, ece_ref, l1_ref

MANDATORY = [
    ActionType.FOLLOW_UP,
    ActionType.MEDICATION_RECONCILIATION,
    ActionType.PATIENT_EDUCATION,
    ActionType.SYMPTOM_MONITORING,
]

DISPLAY = {
    ActionType.FOLLOW_UP: "Follow-up Appointments",
    ActionType.MEDICATION_RECONCILIATION: "Medication Reconciliation",
    ActionType.PATIENT_EDUCATION: "Patient Education",
    ActionType.SYMPTOM_MONITORING: "Symptom Monitoring",
}

pairs_strategy = st.lists(
    st.tuples(
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        st.integers(min_value=0, max_value=1),
    ),
    min_size=1,
    max_size=200,
)


def dist(fu=0.0, meds=0.0, edu=0.0, mon=0.0, other=0.0) -> dict[ActionType, float]:
    return {
        ActionType.FOLLOW_UP: fu,
        ActionType.MEDICATION_RECONCILIATION: meds,
        ActionType.PATIENT_EDUCATION: edu,
        ActionType.SYMPTOM_MONITORING: mon,
        ActionType.OTHER: other,
    }


# ---------------------------------------------------------------------------
# Coverage


def test_full_coverage():
    report = check_coverage(make_plan(MANDATORY))
    assert report.coverage_all
    assert report.missing == []
    assert coverage_violations(report) == []


def test_missing_education_violation_string():
    plan = make_plan([t for t in MANDATORY if t is not ActionType.PATIENT_EDUCATION])
    report = check_coverage(plan)
    assert not report.coverage_all
    assert "Plan is missing Patient Education" in coverage_violations(report)


def test_other_never_satisfies_coverage():
    report = check_coverage(make_plan([ActionType.OTHER]))
    assert not report.coverage_all
    assert len(report.missing) == 4


def test_three_follow_ups_only():
    plan = make_plan([ActionType.FOLLOW_UP] * 3)
    report = check_coverage(plan)
    assert report.has_follow_up
    assert set(report.missing) == {
        ActionType.MEDICATION_RECONCILIATION,
        ActionType.PATIENT_EDUCATION,
        ActionType.SYMPTOM_MONITORING,
    }


def test_all_sixteen_presence_combinations():
    for present in itertools.chain.from_iterable(
        itertools.combinations(MANDATORY, r) for r in range(5)
    ):
        plan = make_plan(list(present))
        report = check_coverage(plan)
        expected_missing = [t for t in MANDATORY if t not in present]
        assert report.coverage_all == (len(present) == 4)
        assert report.missing == expected_missing
        assert coverage_violations(report) == [
            f"Plan is missing {DISPLAY[t]}" for t in expected_missing
        ]
        booleans = [
            report.has_follow_up,
            report.has_meds,
            report.has_education,
            report.has_monitoring,
        ]
        assert report.coverage_all == all(booleans)


# ---------------------------------------------------------------------------
# Brier


def test_brier_perfect_confidence():
    assert brier(records_from_pairs([(1.0, 1)])) == 0.0


def test_brier_hand_value():
    # (0.8-0)^2 = 0.64, (0.6-1)^2 = 0.16 -> mean 0.40
    value = brier(records_from_pairs([(0.8, 0), (0.6, 1)]))
    assert value == pytest.approx(0.40, abs=1e-12)


def test_brier_empty_raises():
    with pytest.raises(EmptyRecords):
        brier([])


@given(pairs_strategy)
@settings(max_examples=200)
def test_brier_matches_reference(pairs):
    assert brier(records_from_pairs(pairs)) == pytest.approx(
        brier_ref(pairs), abs=1e-12
    )


# ---------------------------------------------------------------------------
# ECE


def test_ece_single_record_bin_ten():
    # (0.95, 1) in bin 10: conf 0.95, acc 1 -> 0.05
    value = ece(records_from_pairs([(0.95, 1)]), 10)
    assert value == pytest.approx(0.05, abs=1e-12)


def test_ece_perfectly_calibrated_construction():
    # In bin b put 20 records at the bin center with exactly center*20 ones,
    # so acc_b == conf_b everywhere and the ECE vanishes by construction.
    pairs: list[tuple[float, int]] = []
    for b in range(1, 11):
        center = (b - 0.5) / 10
        ones = round(center * 20)
        pairs.extend((center, 1) for _ in range(ones))
        pairs.extend((center, 0) for _ in range(20 - ones))
    assert ece(records_from_pairs(pairs), 10) == pytest.approx(0.0, abs=1e-12)


def test_ece_hand_value_three_records():
    # All in bin 10: acc = 2/3, conf 0.95 -> |2/3 - 0.95| = 0.28333...
    value = ece(records_from_pairs([(0.92, 1), (0.98, 1), (0.91, 0)]), 10)
    assert value == pytest.approx(abs(2 / 3 - 0.95), abs=1e-12)
    assert value == pytest.approx(0.2833333333333333, abs=1e-12)


def test_ece_zero_confidence_goes_to_bin_one():
    # p=0 assigned to bin 1 (conf 0.05): |0 - 0.05| = 0.05
    value = ece(records_from_pairs([(0.0, 0)]), 10)
    assert value == pytest.approx(0.05, abs=1e-12)


def test_ece_empty_raises():
    with pytest.raises(EmptyRecords):
        ece([], 10)


@given(pairs_strategy, st.sampled_from([1, 5, 10]))
@settings(max_examples=200)
def test_ece_matches_reference(pairs, bins):
    assert ece(records_from_pairs(pairs), bins) == pytest.approx(
        ece_ref(pairs, bins), abs=1e-12
    )


@given(pairs_strategy)
@settings(max_examples=100)
def test_ece_single_bin_degeneracy(pairs):
    records = records_from_pairs(pairs)
    mean_y = sum(y for _p, y in pairs) / len(pairs)
    assert ece(records, 1) == pytest.approx(abs(mean_y - 0.5), abs=1e-12)


@given(pairs_strategy, st.sampled_from([1, 5, 10]))
@settings(max_examples=100)
def test_ece_meanconf_matches_reference(pairs, bins):
    assert ece_meanconf(records_from_pairs(pairs), bins) == pytest.approx(
        ece_meanconf_ref(pairs, bins), abs=1e-12
    )


# ---------------------------------------------------------------------------
# Drift


def test_l1_identical_distributions():
    d = dist(fu=0.4, meds=0.3, edu=0.2, mon=0.1)
    assert l1_drift(d, d) == 0.0


def test_l1_boundary_value_is_not_a_warning():
    # 0.15 + 0.05 + 0.05 + 0.15 = 0.40 exactly; strict > must not fire.
    current = dist(fu=0.4, meds=0.3, edu=0.2, mon=0.1)
    reference = dist(fu=0.25, meds=0.25, edu=0.25, mon=0.25)
    value = l1_drift(current, reference)
    assert value == pytest.approx(0.40, abs=1e-12)
    tracker = DriftTracker(warn_threshold=0.4)
    assert not value > tracker.warn_threshold


def test_l1_disjoint_supports_is_two():
    assert l1_drift(dist(fu=1.0), dist(meds=1.0)) == pytest.approx(2.0, abs=1e-12)


def test_l1_rejects_non_distribution():
    with pytest.raises(InvalidDistribution):
        l1_drift(dist(fu=0.5), dist(meds=1.0))


@st.composite
def distributions(draw):
    weights = draw(
        st.lists(st.integers(min_value=0, max_value=20), min_size=5, max_size=5).filter(
            lambda w: sum(w) > 0
        )
    )
    total = sum(weights)
    values = [w / total for w in weights]
    return dist(*values)


@given(distributions(), distributions())
@settings(max_examples=200)
def test_l1_symmetric_and_bounded(a, b):
    ab = l1_drift(a, b)
    assert ab == pytest.approx(l1_drift(b, a), abs=1e-12)
    assert 0.0 <= ab <= 2.0 + 1e-12
    assert ab == pytest.approx(l1_ref(a, b), abs=1e-12)


@given(distributions(), distributions(), distributions())
@settings(max_examples=100)
def test_l1_triangle_inequality(a, b, c):
    assert l1_drift(a, c) <= l1_drift(a, b) + l1_drift(b, c) + 1e-12


# ---------------------------------------------------------------------------
# Triage lanes


def test_lane_pass_dominates_confidence():
    assert triage_lane(Verdict.PASS, 0.2) is Lane.GREEN


def test_lane_fail_low_confidence():
    assert triage_lane(Verdict.FAIL, 0.79) is Lane.YELLOW


def test_lane_fail_high_confidence():
    assert triage_lane(Verdict.FAIL, 0.95) is Lane.RED


# ---------------------------------------------------------------------------
# audit()


def test_audit_full_coverage_pass():
    drift = DriftTracker()
    calib = CalibrationAccumulator()
    record = audit(make_plan(MANDATORY, confidence=0.9), drift, calib)
    assert record.verdict is Verdict.PASS
    assert not record.high_conf_error
    assert not record.buffer_flag
    assert record.lane is Lane.GREEN
    assert record.violations == []
    assert calib.records[-1].y == 1


def test_audit_threshold_is_inclusive():
    plan = make_plan(
        [t for t in MANDATORY if t is not ActionType.SYMPTOM_MONITORING],
        confidence=0.8,
    )
    record = audit(plan, DriftTracker(), CalibrationAccumulator())
    assert record.verdict is Verdict.FAIL
    assert record.high_conf_error
    assert record.buffer_flag
    assert record.lane is Lane.RED


def test_audit_below_threshold_yellow():
    plan = make_plan(
        [t for t in MANDATORY if t is not ActionType.PATIENT_EDUCATION],
        confidence=0.55,
    )
    record = audit(plan, DriftTracker(), CalibrationAccumulator())
    assert record.verdict is Verdict.FAIL
    assert not record.high_conf_error
    assert record.lane is Lane.YELLOW


def test_audit_first_episode_drift_zero():
    drift = DriftTracker()
    record = audit(make_plan(MANDATORY), drift, CalibrationAccumulator())
    assert record.drift_l1 == 0.0
    assert not record.drift_warning


def test_audit_drift_uses_pre_update_reference():
    drift = DriftTracker()
    calib = CalibrationAccumulator()
    audit(make_plan([ActionType.FOLLOW_UP]), drift, calib)
    # Second episode: all-meds plan vs reference all-follow-up -> L1 = 2.
    record = audit(make_plan([ActionType.MEDICATION_RECONCILIATION]), drift, calib)
    assert record.drift_l1 == pytest.approx(2.0, abs=1e-12)
    assert record.drift_warning


def test_audit_does_not_mutate_plan_and_is_deterministic():
    plan = make_plan(MANDATORY[:2], confidence=0.85)
    before = deepcopy(plan)
    drift_a, calib_a = DriftTracker(), CalibrationAccumulator()
    drift_b, calib_b = DriftTracker(), CalibrationAccumulator()
    record_a = audit(plan, drift_a, calib_a)
    record_b = audit(plan, drift_b, calib_b)
    assert plan == before
    assert record_a == record_b


def test_audit_empty_plan_has_zero_drift_and_no_fold():
    drift = DriftTracker()
    record = audit(make_plan([]), drift, CalibrationAccumulator())
    assert record.verdict is Verdict.FAIL
    assert record.drift_l1 == 0.0
    assert sum(drift.cumulative_counts.values()) == 0


@given(
    st.lists(
        st.tuples(
            st.lists(st.sampled_from(MANDATORY + [ActionType.OTHER]), max_size=6),
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        ),
        min_size=1,
        max_size=30,
    )
)
@settings(max_examples=50)
def test_high_conf_error_implies_fail_and_buffer_flag(episodes):
    drift = DriftTracker()
    calib = CalibrationAccumulator()
    fails = 0
    hc_errors = 0
    for types, confidence in episodes:
        record = audit(make_plan(list(types), confidence=confidence), drift, calib)
        fails += record.verdict is Verdict.FAIL
        hc_errors += record.high_conf_error
        assert record.buffer_flag == record.high_conf_error
        if record.high_conf_error:
            assert record.verdict is Verdict.FAIL
    assert fails >= hc_errors
