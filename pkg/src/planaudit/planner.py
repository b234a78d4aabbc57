"""Planner side of the pipeline: prompt context, backends, Tier-1 refinement.

The planner builds a prompt context from the snapshot and retrieved
guideline snippets (optionally via the context cache), asks a pluggable
backend for a raw completion, parses it into an ActionPlan, and, when
self-improvement is enabled, regenerates with the prior draft and the
missing categories injected until the coverage gate passes or the budget
runs out.
"""

from __future__ import annotations

import json
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Protocol

import httpx

from .actions import (
    CATEGORY_DISPLAY,
    MANDATORY_TYPES,
    ActionItem,
    ActionPlan,
    ActionType,
    canonicalize_action_type,
)
from .auditor import check_coverage
from .canonical import fnv1a_64_hex
from .guidelines import RetrievalIndex, retrieve
from .snapshot import PatientSnapshot

PROMPT_TEMPLATE_VERSION = "prompt-v1"

SYSTEM_PROMPT = """\
You are a hospital discharge planning assistant. Produce a structured
discharge action plan as a single JSON object with this schema:
{"actions": [{"type": "<category>", "details": "<instruction>",
"deadline_hours": <number>}], "confidence": <0..1>}
Every plan must include actions of all four categories: Follow-up
Appointments, Medication Reconciliation, Patient Education, and Symptom
Monitoring. Respond with JSON only.
"""


class PlanParseError(ValueError):
    """No JSON object found, or "actions" absent / not a list."""


class BackendError(RuntimeError):
    """Transport failure or non-auth HTTP error after retries."""


class AuthError(RuntimeError):
    """401/403 from the backend; never retried."""


@dataclass
class PromptContext:
    snapshot_text: str
    guideline_snippets: list[str] = field(default_factory=list)
    prior_draft: str | None = None
    missing_categories: list[ActionType] | None = None
    cache_key: str = ""

    def user_prompt(self) -> str:
        parts = [self.snapshot_text]
        if self.guideline_snippets:
            parts.append("Relevant guidelines:")
            parts.extend(f"* {snippet}" for snippet in self.guideline_snippets)
        if self.prior_draft:
            parts.append("Your previous draft was:")
            parts.append(self.prior_draft)
        if self.missing_categories:
            names = ", ".join(CATEGORY_DISPLAY[t] for t in self.missing_categories)
            parts.append(f"The previous draft is missing: {names}. "
                         f"Regenerate the full plan including these categories.")
        return "\n".join(parts)


@dataclass
class PlannerConfig:
    enable_self_improve: bool = False
    enable_cache: bool = False
    max_refine_iterations: int = 1
    confidence_default: float = 0.5
    retrieval_k: int = 3
    backend: str = "scripted"
    backend_params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_refine_iterations < 0:
            raise ValueError("max_refine_iterations must be >= 0")
        if not 0.0 <= self.confidence_default <= 1.0:
            raise ValueError("confidence_default must be in [0, 1]")


@dataclass
class DraftRecord:
    draft_index: int
    parsed: bool
    covered: list[str]
    missing: list[str]
    elapsed_ms: float


@dataclass
class EpisodeTelemetry:
    cache_hit: bool = False
    refine_iterations: int = 0
    confidence_imputed: bool = False
    drafts: list[DraftRecord] = field(default_factory=list)
    simulated_latency_ms: float | None = None
    template_version: str = PROMPT_TEMPLATE_VERSION


class ContextCache:
    """Concurrent-reader cache for built prompt contexts, keyed pre-retrieval."""

    def __init__(self) -> None:
        self._entries: dict[str, PromptContext] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> PromptContext | None:
        with self._lock:
            ctx = self._entries.get(key)
            if ctx is not None:
                self.hits += 1
            else:
                self.misses += 1
            return ctx

    def put(self, key: str, ctx: PromptContext) -> None:
        with self._lock:
            self._entries[key] = ctx

    def __len__(self) -> int:
        return len(self._entries)


class PlannerBackend(Protocol):
    backend_id: str

    def generate(self, context: PromptContext) -> str: ...


def build_context(
    snapshot: PatientSnapshot,
    index: RetrievalIndex,
    cache: ContextCache | None,
    cfg: PlannerConfig,
) -> tuple[PromptContext, bool]:
    """Construct (or fetch from cache) the base prompt context.

    Returns (context, cache_hit). The lookup key hashes the snapshot content
    hash, index fingerprint, k and template version; snippet ids are not
    known before retrieval, but retrieval is deterministic so the two keys
    identify the same context.
    """
    lookup_key = fnv1a_64_hex(
        "ctx", snapshot.content_hash, index.fingerprint,
        str(cfg.retrieval_k), PROMPT_TEMPLATE_VERSION,
    )
    if cfg.enable_cache and cache is not None:
        cached = cache.get(lookup_key)
        if cached is not None:
            return cached, True

    query = " ".join(
        item.display for item in (*snapshot.conditions, *snapshot.medications)
    )
    ranked = retrieve(index, query, cfg.retrieval_k) if len(index) else []
    snippet_ids = [chunk.chunk_id for chunk, _score in ranked]
    context = PromptContext(
        snapshot_text=snapshot.text_summary,
        guideline_snippets=[chunk.text for chunk, _score in ranked],
        cache_key=fnv1a_64_hex(
            "ctxkey", snapshot.content_hash, *snippet_ids, PROMPT_TEMPLATE_VERSION
        ),
    )
    if cfg.enable_cache and cache is not None:
        cache.put(lookup_key, context)
    return context, False


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _first_json_object(raw: str) -> dict[str, Any] | None:
    """Extract the first JSON object, tolerating prose and code fences."""
    candidates = [raw.strip()]
    candidates.extend(match.strip() for match in _FENCE_RE.findall(raw))
    decoder = json.JSONDecoder()
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            pass
    # Last resort: scan for a balanced object anywhere in the text.
    for match in re.finditer(r"\{", raw):
        try:
            obj, _end = decoder.raw_decode(raw, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _coerce_deadline(value: Any) -> float:
    try:
        hours = float(value)
    except (TypeError, ValueError):
        return 0.0
    return max(0.0, hours)


def parse_plan(
    raw: str,
    episode_id: str,
    backend_id: str,
    cfg: PlannerConfig,
) -> ActionPlan:
    """Parse raw backend output into an ActionPlan.

    Tolerant of surrounding prose and malformed individual items; raises
    PlanParseError only when no JSON object is found or "actions" is
    absent / not a list.
    """
    obj = _first_json_object(raw)
    if obj is None:
        raise PlanParseError("no JSON object found in backend output")
    actions_raw = obj.get("actions")
    if not isinstance(actions_raw, list):
        raise PlanParseError('"actions" absent or not a list')

    actions: list[ActionItem] = []
    for item in actions_raw:
        if not isinstance(item, dict):
            continue
        label = str(item.get("type", ""))
        details = str(item.get("details") or "").strip() or "unspecified"
        actions.append(
            ActionItem(
                action_type=canonicalize_action_type(label),
                raw_type_label=label,
                details=details,
                deadline_hours=_coerce_deadline(item.get("deadline_hours")),
            )
        )

    confidence_raw = obj.get("confidence")
    imputed = False
    try:
        confidence = float(confidence_raw)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        confidence = cfg.confidence_default
        imputed = True
    confidence = min(1.0, max(0.0, confidence))

    return ActionPlan(
        actions=actions,
        confidence=confidence,
        draft_index=0,
        backend_id=backend_id,
        episode_id=episode_id,
        confidence_imputed=imputed,
    )


def plan_episode(
    snapshot: PatientSnapshot,
    index: RetrievalIndex,
    cache: ContextCache | None,
    backend: PlannerBackend,
    cfg: PlannerConfig,
    *,
    episode_id: str | None = None,
    replay_hints: tuple[str, list[ActionType]] | None = None,
) -> tuple[ActionPlan, EpisodeTelemetry]:
    """Generate a plan with optional Tier-1 within-episode refinement.

    The internal check is exactly the auditor's coverage predicate. The
    returned draft is the best seen (most mandatory categories covered,
    then latest draft index), restricted to drafts whose covered set
    contains draft 0's, which makes refinement monotone regardless of
    backend behavior. `replay_hints` (prior plan JSON + missing categories)
    seeds draft 0's context for buffer-replay runs.
    """
    if episode_id is None:
        episode_id = f"ep-{snapshot.content_hash[:12]}"

    base_context, cache_hit = build_context(snapshot, index, cache, cfg)
    telemetry = EpisodeTelemetry(cache_hit=cache_hit)

    context = base_context
    if replay_hints is not None:
        prior_json, missing = replay_hints
        context = replace(base_context, prior_draft=prior_json, missing_categories=list(missing))

    max_drafts = 1 + (cfg.max_refine_iterations if cfg.enable_self_improve else 0)
    simulated_total: float | None = None

    best: ActionPlan | None = None
    baseline_covered: set[ActionType] | None = None
    last_error: PlanParseError | None = None

    for draft_index in range(max_drafts):
        started = time.perf_counter()
        raw = backend.generate(context)
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        simulated = getattr(backend, "last_simulated_latency_ms", None)
        if simulated is not None:
            simulated_total = (simulated_total or 0.0) + simulated

        try:
            plan = parse_plan(raw, episode_id, backend.backend_id, cfg)
        except PlanParseError as exc:
            last_error = exc
            telemetry.drafts.append(
                DraftRecord(draft_index, False, [], [t.value for t in MANDATORY_TYPES],
                            elapsed_ms)
            )
            # Retry with an everything-missing hint when budget remains.
            context = replace(
                base_context,
                prior_draft=None,
                missing_categories=list(MANDATORY_TYPES),
            )
            continue

        plan.draft_index = draft_index
        coverage = check_coverage(plan)
        covered = plan.covered_types()
        telemetry.drafts.append(
            DraftRecord(
                draft_index,
                True,
                sorted(t.value for t in covered),
                [t.value for t in coverage.missing],
                elapsed_ms,
            )
        )
        telemetry.confidence_imputed = telemetry.confidence_imputed or plan.confidence_imputed

        if baseline_covered is None:
            baseline_covered = covered
        if covered >= baseline_covered:
            if best is None or (len(covered), plan.draft_index) >= (
                len(best.covered_types()),
                best.draft_index,
            ):
                best = plan

        if coverage.coverage_all:
            break
        context = replace(
            base_context,
            prior_draft=json.dumps(plan.to_wire_dict()),
            missing_categories=list(coverage.missing),
        )

    telemetry.refine_iterations = max(0, len(telemetry.drafts) - 1)
    telemetry.simulated_latency_ms = simulated_total
    if best is None:
        raise last_error or PlanParseError("no draft produced")
    return best, telemetry


# ---------------------------------------------------------------------------
# Backends


@dataclass
class ScriptedPolicy:
    """Deterministic stand-in for an LLM, driven by per-category probabilities.

    When a prior draft is present, previously covered categories are carried
    over and each missing category is repaired with `repair_prob`.
    """

    include_prob: dict[ActionType, float] = field(
        default_factory=lambda: {t: 1.0 for t in MANDATORY_TYPES}
    )
    repair_prob: float = 1.0
    confidence_mean: float = 0.9
    confidence_spread: float = 0.0
    latency_ms: float | None = None

    _WIRE_KEYS = {
        "follow_up": ActionType.FOLLOW_UP,
        "meds": ActionType.MEDICATION_RECONCILIATION,
        "education": ActionType.PATIENT_EDUCATION,
        "monitoring": ActionType.SYMPTOM_MONITORING,
    }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "ScriptedPolicy":
        include = {t: 1.0 for t in MANDATORY_TYPES}
        for key, action_type in cls._WIRE_KEYS.items():
            if key in payload.get("include_prob", {}):
                include[action_type] = float(payload["include_prob"][key])
        confidence = payload.get("confidence", {})
        return cls(
            include_prob=include,
            repair_prob=float(payload.get("repair_prob", 1.0)),
            confidence_mean=float(confidence.get("mean", 0.9)),
            confidence_spread=float(confidence.get("spread", 0.0)),
            latency_ms=(
                float(payload["latency_ms"]) if payload.get("latency_ms") is not None else None
            ),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ScriptedPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def fingerprint(self) -> str:
        return fnv1a_64_hex(
            "policy",
            *(f"{t.value}={self.include_prob[t]!r}" for t in MANDATORY_TYPES),
            repr(self.repair_prob),
            repr(self.confidence_mean),
            repr(self.confidence_spread),
        )


_ACTION_LABELS = {
    ActionType.FOLLOW_UP: "Follow-up Appointment",
    ActionType.MEDICATION_RECONCILIATION: "Medication Reconciliation",
    ActionType.PATIENT_EDUCATION: "Patient Education",
    ActionType.SYMPTOM_MONITORING: "Symptom Monitoring",
}

_ACTION_DETAILS = {
    ActionType.FOLLOW_UP: (
        "Schedule follow-up with primary care within one week",
        "Arrange outpatient clinic visit after discharge",
    ),
    ActionType.MEDICATION_RECONCILIATION: (
        "Reconcile discharge medications against the inpatient list",
        "Review all active prescriptions with the patient",
    ),
    ActionType.PATIENT_EDUCATION: (
        "Educate patient on diagnosis and medication schedule",
        "Provide written discharge instructions and teach-back",
    ),
    ActionType.SYMPTOM_MONITORING: (
        "Instruct patient on warning signs requiring urgent review",
        "Monitor for recurrence of presenting symptoms",
    ),
}

_DEADLINES = (24.0, 48.0, 72.0, 168.0)


class ScriptedBackend:
    """Seeded test double emitting syntactically valid plan JSON.

    The per-call RNG is a pure function of (seed, policy, context content),
    so identical inputs give byte-identical output and no state leaks across
    episodes, enabling cache-transparency and paired-config comparisons.
    """

    backend_id = "scripted"

    def __init__(self, policy: ScriptedPolicy | None = None, seed: int = 0):
        self.policy = policy or ScriptedPolicy()
        self.seed = seed
        self.last_simulated_latency_ms: float | None = (
            self.policy.latency_ms if self.policy.latency_ms is not None else 0.0
        )

    def _rng_for(self, context: PromptContext) -> random.Random:
        missing = ",".join(
            t.value for t in (context.missing_categories or [])
        )
        material = fnv1a_64_hex(
            "scripted",
            str(self.seed),
            self.policy.fingerprint(),
            context.snapshot_text,
            context.prior_draft or "",
            missing,
        )
        return random.Random(int(material, 16))

    def generate(self, context: PromptContext) -> str:
        rng = self._rng_for(context)
        policy = self.policy

        included: list[ActionType] = []
        if context.prior_draft is not None:
            missing = set(context.missing_categories or [])
            for action_type in MANDATORY_TYPES:
                if action_type in missing:
                    if rng.random() < policy.repair_prob:
                        included.append(action_type)
                else:
                    included.append(action_type)
        else:
            for action_type in MANDATORY_TYPES:
                if rng.random() < policy.include_prob[action_type]:
                    included.append(action_type)

        actions = [
            {
                "type": _ACTION_LABELS[action_type],
                "details": rng.choice(_ACTION_DETAILS[action_type]),
                "deadline_hours": rng.choice(_DEADLINES),
            }
            for action_type in included
        ]
        low = max(0.0, policy.confidence_mean - policy.confidence_spread)
        high = min(1.0, policy.confidence_mean + policy.confidence_spread)
        confidence = round(rng.uniform(low, high), 4)
        payload = json.dumps({"actions": actions, "confidence": confidence})

        if policy.latency_ms:
            time.sleep(policy.latency_ms / 1000.0)
        # Occasionally wrap in prose + a code fence so the extraction path is
        # exercised end to end.
        if rng.random() < 0.3:
            return f"Here is the discharge plan:\n```json\n{payload}\n```\n"
        return payload


class HttpBackend:
    """Chat-style HTTP backend (OpenAI-compatible request/response shape)."""

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "",
        *,
        timeout_seconds: float = 60.0,
        max_retries: int = 2,
        backoff_base_seconds: float = 1.0,
        forward_cache_hint: bool = False,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.max_retries = max_retries
        self.backoff_base_seconds = backoff_base_seconds
        self.forward_cache_hint = forward_cache_hint
        self.backend_id = f"http:{model or 'default'}"
        self.last_simulated_latency_ms = None
        self._client = client or httpx.Client(timeout=timeout_seconds)

    def _headers(self, context: PromptContext) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        if self.forward_cache_hint and context.cache_key:
            # Provider-side prompt-cache hint; nothing is asserted about it.
            headers["X-Prompt-Cache-Key"] = context.cache_key
        return headers

    def generate(self, context: PromptContext) -> str:
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": context.user_prompt()},
            ],
        }
        attempt = 0
        while True:
            try:
                response = self._client.post(
                    self.endpoint, json=body, headers=self._headers(context)
                )
            except httpx.HTTPError as exc:
                if attempt >= self.max_retries:
                    raise BackendError(f"transport failure: {exc}") from exc
                time.sleep(self.backoff_base_seconds * (2**attempt))
                attempt += 1
                continue

            if response.status_code in (401, 403):
                raise AuthError(f"HTTP {response.status_code} from backend")
            if response.status_code == 429 or response.status_code >= 500:
                if attempt >= self.max_retries:
                    raise BackendError(
                        f"HTTP {response.status_code} after {attempt} retries"
                    )
                time.sleep(self.backoff_base_seconds * (2**attempt))
                attempt += 1
                continue
            if not 200 <= response.status_code < 300:
                raise BackendError(
                    f"HTTP {response.status_code}: {response.text[:200]}"
                )
            return self._extract_text(response.json())

    @staticmethod
    def _extract_text(payload: Any) -> str:
        try:
            choice = payload["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("malformed completion payload") from exc
        message = choice.get("message")
        if isinstance(message, dict) and isinstance(message.get("content"), str):
            return message["content"]
        if isinstance(choice.get("text"), str):
            return choice["text"]
        raise BackendError("completion payload has no text content")
