from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

import pytest

from planaudit.actions import ActionItem, ActionPlan, ActionType
from planaudit.fhir import (
    ActiveFilterPolicy,
    FhirResource,
    PatientBundle,
    assemble_bundles,
    filter_active,
    load_ndjson,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
COHORT_DIR = FIXTURES / "cohort50"
GUIDELINES_JSON = FIXTURES / "guidelines.json"

LABEL_FOR = {
    ActionType.FOLLOW_UP: "Follow-up Appointment",
    ActionType.MEDICATION_RECONCILIATION: "Medication Reconciliation",
    ActionType.PATIENT_EDUCATION: "Patient Education",
    ActionType.SYMPTOM_MONITORING: "Symptom Monitoring",
    ActionType.OTHER: "Dietary Counseling",
}


def make_plan(
    types: list[ActionType],
    confidence: float = 0.9,
    episode_id: str = "ep-1",
    backend_id: str = "test",
) -> ActionPlan:
    actions = [
        ActionItem(
            action_type=t,
            raw_type_label=LABEL_FOR[t],
            details=f"{LABEL_FOR[t]} details",
            deadline_hours=24.0,
        )
        for t in types
    ]
    return ActionPlan(
        actions=actions,
        confidence=confidence,
        episode_id=episode_id,
        backend_id=backend_id,
    )


def make_resource(
    kind: str,
    resource_id: str,
    patient: str | None = "p1",
    status: str = "active",
    display: str = "Thing",
    timestamp: str | None = None,
) -> FhirResource:
    raw: dict = {"resourceType": kind, "id": resource_id}
    if patient and kind != "Patient":
        raw["subject"] = {"reference": f"Patient/{patient}"}
    return FhirResource(
        kind=kind,
        resource_id=resource_id,
        patient_ref=f"Patient/{resource_id}" if kind == "Patient" else (
            f"Patient/{patient}" if patient else None
        ),
        status=status,
        display=display,
        timestamp=(
            datetime.fromisoformat(timestamp).replace(tzinfo=timezone.utc)
            if timestamp
            else None
        ),
        raw=json.dumps(raw),
    )


@pytest.fixture(scope="session")
def cohort_resources():
    resources, warnings = load_ndjson(COHORT_DIR)
    assert not warnings
    return resources


@pytest.fixture(scope="session")
def cohort_bundles(cohort_resources) -> list[PatientBundle]:
    bundles, warnings = assemble_bundles(cohort_resources)
    assert not warnings
    return bundles


@pytest.fixture(scope="session")
def filtered_bundles(cohort_bundles) -> list[PatientBundle]:
    policy = ActiveFilterPolicy()
    return [filter_active(b, policy) for b in cohort_bundles]
