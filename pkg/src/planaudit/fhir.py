"""FHIR R4 subset parsing, NDJSON loading, bundle assembly and active filtering.

Only six resource kinds are understood (Patient, Encounter, Condition,
MedicationRequest, Observation, Procedure) and only the fields the
summarizer needs are extracted: id, patient reference, one status code, one
display string and one timestamp. The original JSON text is retained for
provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable

from .canonical import parse_instant

SUPPORTED_KINDS = (
    "Patient",
    "Encounter",
    "Condition",
    "MedicationRequest",
    "Observation",
    "Procedure",
)

_TIMESTAMP_FIELDS = ("effectiveDateTime", "authoredOn", "performedDateTime")


class UnsupportedResourceType(ValueError):
    """resourceType outside the six-kind subset."""


class MalformedResource(ValueError):
    """Missing id or unparseable JSON."""


@dataclass
class FhirResource:
    kind: str
    resource_id: str
    patient_ref: str | None
    status: str
    display: str
    timestamp: datetime | None
    raw: str

    @property
    def sort_key(self) -> tuple[int, str, str]:
        # Missing timestamps sort before present ones; ties break on id.
        if self.timestamp is None:
            return (0, "", self.resource_id)
        return (1, self.timestamp.isoformat(), self.resource_id)


@dataclass
class PatientBundle:
    patient_id: str
    patient: FhirResource
    encounters: list[FhirResource] = field(default_factory=list)
    conditions: list[FhirResource] = field(default_factory=list)
    medication_requests: list[FhirResource] = field(default_factory=list)
    observations: list[FhirResource] = field(default_factory=list)
    procedures: list[FhirResource] = field(default_factory=list)
    source: str = "files"

    def resource_lists(self) -> dict[str, list[FhirResource]]:
        return {
            "encounters": self.encounters,
            "conditions": self.conditions,
            "medication_requests": self.medication_requests,
            "observations": self.observations,
            "procedures": self.procedures,
        }

    def all_resources(self) -> list[FhirResource]:
        out: list[FhirResource] = []
        for resources in self.resource_lists().values():
            out.extend(resources)
        return out


@dataclass(frozen=True)
class ActiveFilterPolicy:
    condition_statuses: frozenset[str] = frozenset({"active", "recurrence", "relapse"})
    medication_statuses: frozenset[str] = frozenset({"active"})
    observation_recency_hours: float | None = None
    max_items_per_kind: int | None = None

    def __post_init__(self) -> None:
        if self.observation_recency_hours is not None and self.observation_recency_hours <= 0:
            raise ValueError("observation_recency_hours must be positive")
        if self.max_items_per_kind is not None and self.max_items_per_kind <= 0:
            raise ValueError("max_items_per_kind must be positive")


def _first_coding_code(codeable: Any) -> str | None:
    if not isinstance(codeable, dict):
        return None
    codings = codeable.get("coding")
    if isinstance(codings, list):
        for coding in codings:
            if isinstance(coding, dict) and coding.get("code"):
                return str(coding["code"])
    return None


def _extract_status(obj: dict[str, Any]) -> str:
    status = obj.get("status")
    if isinstance(status, str) and status:
        return status
    clinical = _first_coding_code(obj.get("clinicalStatus"))
    if clinical:
        return clinical
    return "unknown"


def _extract_display(obj: dict[str, Any]) -> str:
    code = obj.get("code")
    if isinstance(code, dict):
        if isinstance(code.get("text"), str) and code["text"]:
            return code["text"]
        codings = code.get("coding")
        if isinstance(codings, list):
            for coding in codings:
                if isinstance(coding, dict) and coding.get("display"):
                    return str(coding["display"])
    med = obj.get("medicationCodeableConcept")
    if isinstance(med, dict) and isinstance(med.get("text"), str) and med["text"]:
        return med["text"]
    # Encounter has no "code" element in R4; its type list is the analog.
    enc_types = obj.get("type")
    if isinstance(enc_types, list):
        for concept in enc_types:
            if isinstance(concept, dict) and isinstance(concept.get("text"), str) and concept["text"]:
                return concept["text"]
    return "unknown"


def _extract_timestamp(obj: dict[str, Any]) -> datetime | None:
    for key in _TIMESTAMP_FIELDS:
        ts = parse_instant(obj.get(key))
        if ts is not None:
            return ts
    for period_key in ("period", "performedPeriod"):
        period = obj.get(period_key)
        if isinstance(period, dict):
            ts = parse_instant(period.get("start"))
            if ts is not None:
                return ts
    return parse_instant(obj.get("recordedDate"))


def _extract_patient_ref(obj: dict[str, Any]) -> str | None:
    for key in ("subject", "patient"):
        ref = obj.get(key)
        if isinstance(ref, dict) and isinstance(ref.get("reference"), str):
            return ref["reference"]
    return None


def parse_resource(raw: str) -> FhirResource:
    """Parse one JSON resource into the six-kind subset model.

    Unknown extra fields are ignored; the original text is kept verbatim.
    """
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedResource(f"unparseable JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedResource("resource is not a JSON object")

    kind = obj.get("resourceType")
    if not isinstance(kind, str) or not kind:
        raise MalformedResource("missing resourceType")
    if kind not in SUPPORTED_KINDS:
        raise UnsupportedResourceType(f"unsupported resourceType {kind!r}")

    resource_id = obj.get("id")
    if not isinstance(resource_id, str) or not resource_id:
        raise MalformedResource(f"{kind} resource missing id")

    if kind == "Patient":
        patient_ref: str | None = f"Patient/{resource_id}"
    else:
        patient_ref = _extract_patient_ref(obj)

    return FhirResource(
        kind=kind,
        resource_id=resource_id,
        patient_ref=patient_ref,
        status=_extract_status(obj),
        display=_extract_display(obj),
        timestamp=_extract_timestamp(obj),
        raw=raw,
    )


def load_ndjson(path: str | Path) -> tuple[list[FhirResource], list[str]]:
    """Load resources from an NDJSON file or a directory of NDJSON files.

    Per-line failures are reported as warnings, never raised. Raises OSError
    when the path itself is unreadable.
    """
    target = Path(path)
    if not target.exists():
        raise OSError(f"path does not exist: {target}")
    if target.is_dir():
        files = sorted(
            p for p in target.iterdir()
            if p.is_file() and p.suffix in (".ndjson", ".jsonl")
        )
    else:
        files = [target]

    resources: list[FhirResource] = []
    warnings: list[str] = []
    for file_path in files:
        text = file_path.read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                resources.append(parse_resource(line))
            except (UnsupportedResourceType, MalformedResource) as exc:
                warnings.append(f"{file_path.name}:{lineno}: {exc}")
    return resources, warnings


def assemble_bundles(
    resources: Iterable[FhirResource],
) -> tuple[list[PatientBundle], list[str]]:
    """Group resources by patient reference into deterministic bundles.

    Resources without a resolvable patient are dropped with a warning.
    Output bundles are sorted by patient_id; each list obeys the
    (timestamp ascending, then id) order with missing timestamps first.
    """
    warnings: list[str] = []
    patients: dict[str, FhirResource] = {}
    others: list[FhirResource] = []
    seen_ids: set[tuple[str, str]] = set()

    for resource in resources:
        key = (resource.kind, resource.resource_id)
        if key in seen_ids:
            warnings.append(
                f"duplicate {resource.kind} id {resource.resource_id!r} dropped"
            )
            continue
        seen_ids.add(key)
        if resource.kind == "Patient":
            patients[resource.resource_id] = resource
        else:
            others.append(resource)

    list_for_kind = {
        "Encounter": "encounters",
        "Condition": "conditions",
        "MedicationRequest": "medication_requests",
        "Observation": "observations",
        "Procedure": "procedures",
    }
    bundles = {
        pid: PatientBundle(patient_id=pid, patient=patient)
        for pid, patient in patients.items()
    }
    for resource in others:
        ref = resource.patient_ref
        if not ref or not ref.startswith("Patient/"):
            warnings.append(
                f"{resource.kind}/{resource.resource_id} has no patient reference; dropped"
            )
            continue
        pid = ref.split("/", 1)[1]
        bundle = bundles.get(pid)
        if bundle is None:
            warnings.append(
                f"{resource.kind}/{resource.resource_id} references unknown {ref}; dropped"
            )
            continue
        getattr(bundle, list_for_kind[resource.kind]).append(resource)

    for bundle in bundles.values():
        for resources_list in bundle.resource_lists().values():
            resources_list.sort(key=lambda r: r.sort_key)
    return [bundles[pid] for pid in sorted(bundles)], warnings


def _cap_most_recent(resources: list[FhirResource], cap: int | None) -> list[FhirResource]:
    # Lists are already in ascending order, so the most recent items are last.
    if cap is None or len(resources) <= cap:
        return resources
    return resources[-cap:]


def filter_active(bundle: PatientBundle, policy: ActiveFilterPolicy) -> PatientBundle:
    """Apply the active-filter policy; ordering invariant is preserved.

    Observation recency is measured against the most recent observation
    timestamp in the bundle (not wall-clock), which keeps the operation
    deterministic and idempotent.
    """
    conditions = [c for c in bundle.conditions if c.status in policy.condition_statuses]
    medications = [
        m for m in bundle.medication_requests if m.status in policy.medication_statuses
    ]

    observations = list(bundle.observations)
    if policy.observation_recency_hours is not None:
        stamped = [o.timestamp for o in observations if o.timestamp is not None]
        if stamped:
            cutoff = max(stamped) - timedelta(hours=policy.observation_recency_hours)
            observations = [
                o for o in observations if o.timestamp is not None and o.timestamp >= cutoff
            ]
        else:
            observations = []

    cap = policy.max_items_per_kind
    return replace(
        bundle,
        conditions=_cap_most_recent(conditions, cap),
        medication_requests=_cap_most_recent(medications, cap),
        observations=_cap_most_recent(observations, cap),
        encounters=_cap_most_recent(list(bundle.encounters), cap),
        procedures=_cap_most_recent(list(bundle.procedures), cap),
    )
