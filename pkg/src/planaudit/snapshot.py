"""Deterministic flattening of a PatientBundle into a PatientSnapshot.

The summarizer is template-based and non-generative: every display string in
the narrative comes verbatim from the structured lists and vice versa, so
the text is an exact reflection of the record. Output is byte-identical for
identical input bundles regardless of wall-clock time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from .canonical import canonical_json, fnv1a_64, format_instant, utc_now_iso
from .fhir import FhirResource, PatientBundle

# Frozen narrative template version; recorded in metadata so logged runs
# remain comparable if the template ever changes.
TEMPLATE_VERSION = "snapshot-v1"

# Bounded prompt length: each section keeps at most this many items. The cap
# applies to the structured lists and the narrative together so the narrative
# is always an exact rendering of the lists.
SECTION_CAP = 20

_SECTIONS: tuple[tuple[str, str], ...] = (
    ("conditions", "Active Conditions"),
    ("medications", "Active Medications"),
    ("observations", "Recent Observations"),
    ("procedures", "Procedures"),
    ("encounters", "Encounters"),
)


@dataclass
class SnapshotItem:
    display: str
    status: str
    timestamp: datetime | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "display": self.display,
            "status": self.status,
            "timestamp": format_instant(self.timestamp),
        }


@dataclass
class SnapshotMetadata:
    generated_at: str
    counts: dict[str, int]
    dropped: dict[str, int]
    content_hash: str
    template_version: str = TEMPLATE_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "generated_at": self.generated_at,
            "counts": dict(self.counts),
            "dropped": dict(self.dropped),
            "content_hash": self.content_hash,
            "template_version": self.template_version,
        }


@dataclass
class PatientSnapshot:
    patient_id: str
    text_summary: str
    conditions: list[SnapshotItem] = field(default_factory=list)
    medications: list[SnapshotItem] = field(default_factory=list)
    observations: list[SnapshotItem] = field(default_factory=list)
    procedures: list[SnapshotItem] = field(default_factory=list)
    encounters: list[SnapshotItem] = field(default_factory=list)
    metadata: SnapshotMetadata | None = None

    def lists(self) -> dict[str, list[SnapshotItem]]:
        return {
            "conditions": self.conditions,
            "medications": self.medications,
            "observations": self.observations,
            "procedures": self.procedures,
            "encounters": self.encounters,
        }

    @property
    def content_hash(self) -> str:
        return self.metadata.content_hash if self.metadata else ""

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "patient_id": self.patient_id,
            "text_summary": self.text_summary,
        }
        for name, items in self.lists().items():
            out[name] = [item.to_dict() for item in items]
        out["metadata"] = self.metadata.to_dict() if self.metadata else None
        return out

    def to_canonical_json(self) -> str:
        return canonical_json(self.to_dict())


def _render_item(item: SnapshotItem) -> str:
    when = format_instant(item.timestamp) or "n/a"
    return f"- {item.display} (status: {item.status}; time: {when})"


def _section_items(resources: list[FhirResource]) -> tuple[list[SnapshotItem], int]:
    # Rendering order: timestamp descending (missing last), then display
    # ascending, then status. Two-pass stable sort keeps ties ascending.
    items = [
        SnapshotItem(display=r.display, status=r.status, timestamp=r.timestamp)
        for r in resources
    ]
    stamped = sorted(
        (i for i in items if i.timestamp is not None),
        key=lambda i: (i.display, i.status),
    )
    stamped.sort(key=lambda i: i.timestamp, reverse=True)  # type: ignore[arg-type,return-value]
    unstamped = sorted(
        (i for i in items if i.timestamp is None),
        key=lambda i: (i.display, i.status),
    )
    ordered = stamped + unstamped
    dropped = max(0, len(ordered) - SECTION_CAP)
    return ordered[:SECTION_CAP], dropped


def summarize(bundle: PatientBundle) -> PatientSnapshot:
    """Flatten an (active-filtered) bundle into narrative + structured lists."""
    sections: dict[str, list[SnapshotItem]] = {}
    dropped: dict[str, int] = {}
    source_lists = bundle.resource_lists()
    key_for = {
        "conditions": "conditions",
        "medications": "medication_requests",
        "observations": "observations",
        "procedures": "procedures",
        "encounters": "encounters",
    }
    for name, _header in _SECTIONS:
        items, n_dropped = _section_items(source_lists[key_for[name]])
        sections[name] = items
        dropped[name] = n_dropped

    lines = [
        f"Patient summary ({TEMPLATE_VERSION})",
        f"Demographics: patient {bundle.patient_id}",
    ]
    for name, header in _SECTIONS:
        items = sections[name]
        if not items:
            lines.append(f"{header}: none")
            continue
        lines.append(f"{header}:")
        lines.extend(_render_item(item) for item in items)
        if dropped[name]:
            lines.append(f"  ... and {dropped[name]} more")
    text_summary = "\n".join(lines) + "\n"

    hash_payload = canonical_json(
        {
            "patient_id": bundle.patient_id,
            "template_version": TEMPLATE_VERSION,
            "sections": {
                name: [item.to_dict() for item in items]
                for name, items in sections.items()
            },
        }
    )
    content_hash = format(fnv1a_64(hash_payload.encode("utf-8")), "016x")

    metadata = SnapshotMetadata(
        generated_at=utc_now_iso(),
        counts={name: len(items) for name, items in sections.items()},
        dropped=dropped,
        content_hash=content_hash,
    )
    return PatientSnapshot(
        patient_id=bundle.patient_id,
        text_summary=text_summary,
        conditions=sections["conditions"],
        medications=sections["medications"],
        observations=sections["observations"],
        procedures=sections["procedures"],
        encounters=sections["encounters"],
        metadata=metadata,
    )


def is_eligible(snapshot: PatientSnapshot) -> bool:
    """Cohort inclusion: at least one structured list is non-empty."""
    return any(items for items in snapshot.lists().values())


def extract_narrative_displays(text_summary: str) -> list[str]:
    """Pull the display strings back out of a narrative (test/verification aid)."""
    displays: list[str] = []
    for line in text_summary.splitlines():
        if line.startswith("- ") and " (status: " in line:
            displays.append(line[2:].rsplit(" (status: ", 1)[0])
    return displays
