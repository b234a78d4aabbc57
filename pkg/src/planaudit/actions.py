"""Action-plan data model: typed actions, label canonicalization, (de)serialization.

Both the planner and the auditor depend on these types; keeping them here
means the two sides can never disagree about what an action category is.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class ActionType(Enum):
    FOLLOW_UP = "follow_up"
    MEDICATION_RECONCILIATION = "medication_reconciliation"
    PATIENT_EDUCATION = "patient_education"
    SYMPTOM_MONITORING = "symptom_monitoring"
    OTHER = "other"


# The four categories a complete plan must cover; OTHER never satisfies coverage.
MANDATORY_TYPES: tuple[ActionType, ...] = (
    ActionType.FOLLOW_UP,
    ActionType.MEDICATION_RECONCILIATION,
    ActionType.PATIENT_EDUCATION,
    ActionType.SYMPTOM_MONITORING,
)

CATEGORY_DISPLAY: dict[ActionType, str] = {
    ActionType.FOLLOW_UP: "Follow-up Appointments",
    ActionType.MEDICATION_RECONCILIATION: "Medication Reconciliation",
    ActionType.PATIENT_EDUCATION: "Patient Education",
    ActionType.SYMPTOM_MONITORING: "Symptom Monitoring",
    ActionType.OTHER: "Other",
}

_WORD_RE = re.compile(r"[a-z0-9]+")


def _normalize_label(label: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace, singularize tokens."""
    tokens = _WORD_RE.findall(label.lower())
    singular = [t[:-1] if len(t) > 3 and t.endswith("s") else t for t in tokens]
    return " ".join(singular)


_SYNONYMS_RAW: dict[ActionType, tuple[str, ...]] = {
    ActionType.FOLLOW_UP: (
        "follow up",
        "followup",
        "follow up appointment",
        "followup appointment",
        "appointment",
        "follow up visit",
        "follow up care",
        "referral",
    ),
    ActionType.MEDICATION_RECONCILIATION: (
        "medication reconciliation",
        "med reconciliation",
        "medication",
        "med review",
        "medication review",
        "medication management",
    ),
    ActionType.PATIENT_EDUCATION: (
        "education",
        "patient education",
        "patient teaching",
        "discharge education",
        "teaching",
    ),
    ActionType.SYMPTOM_MONITORING: (
        "monitoring",
        "symptom monitoring",
        "monitor symptom",
        "self monitoring",
        "warning sign",
        "red flag",
    ),
}

# Lookup table keyed on the normalized form so table and input go through
# the identical normalization.
_SYNONYM_TABLE: dict[str, ActionType] = {
    _normalize_label(raw): action_type
    for action_type, raws in _SYNONYMS_RAW.items()
    for raw in raws
}


def canonicalize_action_type(label: str) -> ActionType:
    """Map a backend's free-form type label onto the canonical enum.

    Unmapped labels become OTHER; they count in drift distributions but never
    satisfy coverage.
    """
    return _SYNONYM_TABLE.get(_normalize_label(label), ActionType.OTHER)


@dataclass
class ActionItem:
    action_type: ActionType
    raw_type_label: str
    details: str
    deadline_hours: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.raw_type_label,
            "details": self.details,
            "deadline_hours": self.deadline_hours,
        }


@dataclass
class ActionPlan:
    actions: list[ActionItem]
    confidence: float
    draft_index: int = 0
    backend_id: str = ""
    episode_id: str = ""
    confidence_imputed: bool = field(default=False, compare=False)

    def covered_types(self) -> set[ActionType]:
        return {a.action_type for a in self.actions if a.action_type in MANDATORY_TYPES}

    def type_counts(self) -> dict[ActionType, int]:
        counts = {t: 0 for t in ActionType}
        for action in self.actions:
            counts[action.action_type] += 1
        return counts

    def to_dict(self) -> dict[str, Any]:
        return {
            "actions": [a.to_dict() for a in self.actions],
            "confidence": self.confidence,
            "draft_index": self.draft_index,
            "backend_id": self.backend_id,
            "episode_id": self.episode_id,
        }

    def to_wire_dict(self) -> dict[str, Any]:
        """The plan as the backend emitted it: actions + confidence only.

        This is the form injected back into prompts (prior draft); harness
        metadata like episode_id must not leak into prompt content.
        """
        return {
            "actions": [a.to_dict() for a in self.actions],
            "confidence": self.confidence,
        }
