"""Deterministic serialization helpers shared across the pipeline.

Everything that feeds a content hash or a byte-stable artifact (snapshots,
per-sample logs, summaries) goes through these functions so that identical
inputs produce identical bytes across processes and platforms.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from typing import Any

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def fnv1a_64_hex(*parts: str) -> str:
    """Hex digest of FNV-1a over parts joined with an unambiguous separator."""
    return format(fnv1a_64("\x1f".join(parts).encode("utf-8")), "016x")


def canonical_json(obj: Any) -> str:
    """Compact JSON with sorted keys; the canonical form for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_json(obj: Any) -> str:
    """Human-readable JSON for on-disk artifacts; key order is insertion order.

    Callers build dicts in their documented schema order, so the output byte
    stream is a pure function of the values.
    """
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False) + "\n"


def parse_instant(value: str | None) -> datetime | None:
    """Parse a FHIR instant/dateTime/date into an aware UTC datetime.

    Accepts date-only forms and the trailing-Z convention (Python 3.10's
    fromisoformat does not). Naive values are taken as UTC. Returns None for
    missing or unparseable input.
    """
    if not value or not isinstance(value, str):
        return None
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        return None
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_instant(value: datetime | None) -> str | None:
    """Render an aware datetime as a compact UTC ISO-8601 string."""
    if value is None:
        return None
    return value.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
