"""Append-only discrepancy buffer for high-confidence coverage failures.

JSON-lines persistence with superseding records: an entry is never mutated
in place, a later record with the same entry_id wins. A crash between lines
loses at most the final partial line, which load skips with a warning.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any

from .actions import ActionPlan, ActionType
from .auditor import AuditRecord

logger = logging.getLogger(__name__)

_clock_lock = threading.Lock()
_last_instant = datetime.min.replace(tzinfo=timezone.utc)


def _next_created_at() -> str:
    """Microsecond UTC instant, strictly increasing within this process.

    Entry creation order must be recoverable from created_at (pending()
    sorts on it), so equal-or-backward clock reads are nudged forward.
    """
    global _last_instant
    with _clock_lock:
        now = datetime.now(timezone.utc)
        if now <= _last_instant:
            now = _last_instant + timedelta(microseconds=1)
        _last_instant = now
        return now.strftime("%Y-%m-%dT%H:%M:%S.%fZ")


class UnknownEntry(KeyError):
    pass


@dataclass
class ReplayOutcome:
    coverage_all: bool
    run_id: str

    def to_dict(self) -> dict[str, Any]:
        return {"coverage_all": self.coverage_all, "run_id": self.run_id}


@dataclass
class DiscrepancyEntry:
    entry_id: str
    patient_id: str
    run_id: str
    config_name: str
    plan: dict[str, Any]
    confidence: float
    missing: list[ActionType]
    created_at: str
    replayed: bool = False
    replay_outcome: ReplayOutcome | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "patient_id": self.patient_id,
            "run_id": self.run_id,
            "config_name": self.config_name,
            "plan": self.plan,
            "confidence": self.confidence,
            "missing": [t.value for t in self.missing],
            "created_at": self.created_at,
            "replayed": self.replayed,
            "replay_outcome": self.replay_outcome.to_dict() if self.replay_outcome else None,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "DiscrepancyEntry":
        outcome = payload.get("replay_outcome")
        return cls(
            entry_id=payload["entry_id"],
            patient_id=payload["patient_id"],
            run_id=payload["run_id"],
            config_name=payload["config_name"],
            plan=payload["plan"],
            confidence=payload["confidence"],
            missing=[ActionType(v) for v in payload.get("missing", [])],
            created_at=payload["created_at"],
            replayed=bool(payload.get("replayed", False)),
            replay_outcome=(
                ReplayOutcome(outcome["coverage_all"], outcome["run_id"])
                if outcome
                else None
            ),
        )


@dataclass
class RunMetadata:
    run_id: str
    config_name: str
    patient_id: str


def flag(
    audit: AuditRecord, plan: ActionPlan, ctx: RunMetadata
) -> DiscrepancyEntry | None:
    """Tier-2 gate: an entry iff the audit raised the buffer flag."""
    if not audit.buffer_flag:
        return None
    return DiscrepancyEntry(
        entry_id=f"{ctx.run_id}:{audit.episode_id}",
        patient_id=ctx.patient_id,
        run_id=ctx.run_id,
        config_name=ctx.config_name,
        plan=plan.to_dict(),
        confidence=plan.confidence,
        missing=list(audit.coverage.missing),
        created_at=_next_created_at(),
    )


class DiscrepancyBuffer:
    """Single-writer JSONL store; readers see a prefix-consistent view."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._latest: dict[str, DiscrepancyEntry] = {}
        self._order: list[str] = []  # first-seen order of entry ids
        self.load_warnings: list[str] = []
        self._load()

    def _load(self) -> None:
        self._latest.clear()
        self._order.clear()
        self.load_warnings.clear()
        if not self.path.exists():
            return
        lines = self.path.read_text(encoding="utf-8").split("\n")
        # A trailing newline leaves one empty tail element; anything else in
        # the final slot is a torn write.
        for lineno, line in enumerate(lines, start=1):
            if not line:
                continue
            try:
                entry = DiscrepancyEntry.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                warning = f"{self.path.name}:{lineno}: skipping bad record ({exc})"
                self.load_warnings.append(warning)
                logger.warning(warning)
                continue
            if entry.entry_id not in self._latest:
                self._order.append(entry.entry_id)
            self._latest[entry.entry_id] = entry

    def _write_line(self, entry: DiscrepancyEntry) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")

    def append(self, entry: DiscrepancyEntry) -> None:
        """Append a new entry; a duplicate entry_id is a no-op."""
        if entry.entry_id in self._latest:
            return
        self._write_line(entry)
        self._latest[entry.entry_id] = entry
        self._order.append(entry.entry_id)

    def pending(self) -> list[DiscrepancyEntry]:
        """Entries not yet replayed, ordered by created_at then entry_id."""
        entries = [e for e in self._latest.values() if not e.replayed]
        return sorted(entries, key=lambda e: (e.created_at, e.entry_id))

    def all_entries(self) -> list[DiscrepancyEntry]:
        return [self._latest[entry_id] for entry_id in self._order]

    def mark_replayed(self, entry_id: str, outcome: ReplayOutcome) -> None:
        """Supersede the entry with a replayed record (latest record wins)."""
        current = self._latest.get(entry_id)
        if current is None:
            raise UnknownEntry(entry_id)
        updated = DiscrepancyEntry(
            entry_id=current.entry_id,
            patient_id=current.patient_id,
            run_id=current.run_id,
            config_name=current.config_name,
            plan=current.plan,
            confidence=current.confidence,
            missing=list(current.missing),
            created_at=current.created_at,
            replayed=True,
            replay_outcome=outcome,
        )
        self._write_line(updated)
        self._latest[entry_id] = updated

    def __len__(self) -> int:
        return len(self._latest)
