"""HTTP JSON API over the harness: launch runs, stream events, browse samples.

All long work happens on background threads behind RunHandles; no endpoint
blocks on planner latency. The run registry is in-memory and rebuilds lazily
from run directories on disk (summaries persist, the registry does not).
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from . import __version__
from .buffer import DiscrepancyBuffer
from .events import RunEventLog
from .fhir import ActiveFilterPolicy
from .guidelines import RetrievalIndex, index_chunks, load_chunks
from .harness import (
    CONFIG_FLAGS,
    EmptyBuffer,
    FileCohort,
    RestCohort,
    RunConfig,
    Services,
    run_buffer_replay,
    run_single_config,
    select_cohort,
)
from .planner import ContextCache, HttpBackend, ScriptedBackend, ScriptedPolicy

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "PLANAUDIT_LLM_ENDPOINT"
ENV_API_KEY = "PLANAUDIT_LLM_API_KEY"
ENV_MODEL = "PLANAUDIT_LLM_MODEL"


@dataclass
class ServiceSettings:
    runs_root: Path = Path("./data/runs")
    cohort: str | None = None  # NDJSON path or FHIR base URL
    guidelines_path: Path | None = None
    buffer_path: Path = Path("./data/discrepancy_buffer.jsonl")
    backend: str = "scripted"
    policy_path: Path | None = None
    seed: int = 0
    patient_limit: int = 50
    cors_origins: list[str] = field(
        default_factory=lambda: ["http://localhost:5173", "http://localhost:3000"]
    )
    ui_dir: Path | None = None
    bearer_token: str | None = None


@dataclass
class RunRecord:
    run_id: str
    config: RunConfig
    state: str = "queued"  # queued | running | completed | failed
    episodes_done: int = 0
    episodes_total: int = 0
    summary: dict[str, Any] | None = None
    error: str | None = None
    event_log: RunEventLog = field(default_factory=RunEventLog)

    def handle(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "state": self.state,
            "config": self.config.to_dict(),
            "progress": {
                "episodes_done": self.episodes_done,
                "episodes_total": self.episodes_total,
            },
            "summary": self.summary if self.state == "completed" else None,
            "error": self.error,
        }


def _api_error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


class RunRegistry:
    """Synchronized map of run records plus shared pipeline services."""

    def __init__(self, settings: ServiceSettings):
        self.settings = settings
        self._records: dict[str, RunRecord] = {}
        self._lock = threading.Lock()
        self._counter = 0
        self._cohort = None
        self._index: RetrievalIndex | None = None
        self.replay_active = False

    # -- shared services ----------------------------------------------------

    def cohort(self):
        with self._lock:
            if self._cohort is None:
                if not self.settings.cohort:
                    raise _api_error(400, "no_cohort", "service has no cohort configured")
                if str(self.settings.cohort).startswith(("http://", "https://")):
                    self._cohort = RestCohort(str(self.settings.cohort), ActiveFilterPolicy())
                else:
                    self._cohort = FileCohort(self.settings.cohort, ActiveFilterPolicy())
            return self._cohort

    def index(self) -> RetrievalIndex:
        with self._lock:
            if self._index is None:
                if self.settings.guidelines_path:
                    self._index = index_chunks(load_chunks(self.settings.guidelines_path))
                else:
                    self._index = index_chunks([])
            return self._index

    def buffer(self) -> DiscrepancyBuffer:
        return DiscrepancyBuffer(self.settings.buffer_path)

    def try_acquire_replay(self) -> bool:
        with self._lock:
            if self.replay_active:
                return False
            self.replay_active = True
            return True

    def release_replay(self) -> None:
        with self._lock:
            self.replay_active = False

    def make_backend(self, seed: int):
        if self.settings.backend == "http":
            endpoint = os.environ.get(ENV_ENDPOINT, "")
            if not endpoint:
                raise _api_error(400, "backend_unconfigured",
                                 f"http backend requires {ENV_ENDPOINT}")
            return HttpBackend(
                endpoint,
                api_key=os.environ.get(ENV_API_KEY, ""),
                model=os.environ.get(ENV_MODEL, ""),
            )
        policy = (
            ScriptedPolicy.from_json_file(self.settings.policy_path)
            if self.settings.policy_path
            else ScriptedPolicy.from_dict(DEFAULT_POLICY)
        )
        return ScriptedBackend(policy, seed=seed)

    # -- records ------------------------------------------------------------

    def new_record(self, cfg: RunConfig) -> RunRecord:
        with self._lock:
            self._counter += 1
            run_id = f"{cfg.name}-{self._counter:04d}"
            record = RunRecord(run_id=run_id, config=cfg)
            self._records[run_id] = record
            return record

    def get(self, run_id: str) -> RunRecord:
        with self._lock:
            record = self._records.get(run_id)
        if record is None:
            record = self._rebuild_from_disk(run_id)
        if record is None:
            raise _api_error(404, "unknown_run", f"no run {run_id!r}")
        return record

    def all_records(self) -> list[RunRecord]:
        self._rebuild_all_from_disk()
        with self._lock:
            return sorted(self._records.values(), key=lambda r: r.run_id)

    # -- lazy rebuild from run directories -----------------------------------

    def _rebuild_from_disk(self, run_id: str) -> RunRecord | None:
        summary_path = self.settings.runs_root / run_id / "summary.json"
        if not summary_path.exists():
            return None
        return self._record_from_summary(run_id, summary_path)

    def _rebuild_all_from_disk(self) -> None:
        root = self.settings.runs_root
        if not root.exists():
            return
        for summary_path in sorted(root.glob("*/summary.json")):
            run_id = summary_path.parent.name
            with self._lock:
                known = run_id in self._records
            if not known:
                self._record_from_summary(run_id, summary_path)

    def _record_from_summary(self, run_id: str, summary_path: Path) -> RunRecord | None:
        try:
            payload = json.loads(summary_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None
        config_payload = payload.pop("config", {})
        try:
            cfg = RunConfig(
                name=config_payload.get("name", payload.get("config_name", "baseline")),
                seed=int(config_payload.get("seed", 0)),
                patient_limit=int(config_payload.get("patient_limit", 50)),
            )
        except ValueError:
            return None
        record = RunRecord(
            run_id=run_id,
            config=cfg,
            state="completed",
            episodes_done=int(payload.get("n", 0)),
            episodes_total=int(payload.get("n", 0)),
            summary=payload,
        )
        self._replay_events_from_samples(record)
        with self._lock:
            self._records.setdefault(run_id, record)
            return self._records[run_id]

    def _replay_events_from_samples(self, record: RunRecord) -> None:
        """Synthesize the event stream of a completed run from its samples."""
        samples_dir = self.settings.runs_root / record.run_id / "samples"
        for sample_path in sorted(samples_dir.glob("*.json")) if samples_dir.exists() else []:
            try:
                sample = json.loads(sample_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            record.event_log.append(
                "episode_started",
                {"episode_id": sample["episode_id"], "patient_id": sample["patient_id"]},
            )
            digest = {
                "episode_id": sample["episode_id"],
                "patient_id": sample["patient_id"],
                "skipped": sample["skipped"],
            }
            if sample.get("audit"):
                audit = sample["audit"]
                digest.update(
                    verdict=audit["verdict"], lane=audit["lane"],
                    coverage_all=audit["coverage"]["coverage_all"],
                    confidence=audit["confidence"], drift_l1=audit["drift_l1"],
                )
            record.event_log.append("episode_completed", digest)
        record.event_log.append("run_completed", {"run_id": record.run_id})

    # -- execution ------------------------------------------------------------

    def launch(self, configs: list[RunConfig]) -> list[str]:
        records = [self.new_record(cfg) for cfg in configs]

        def execute() -> None:
            cohort_ids: list[str] | None = None
            for record in records:
                record.state = "running"
                cfg = record.config
                run_dir = self.settings.runs_root / record.run_id

                def sink(event_type: str, payload: dict[str, Any]) -> None:
                    record.event_log.append(event_type, payload)
                    if event_type == "episode_completed":
                        record.episodes_done += 1

                try:
                    services = Services(
                        cohort=self.cohort(),
                        index=self.index(),
                        backend=self.make_backend(cfg.seed),
                        cache=ContextCache(),
                        buffer=self.buffer(),
                        run_dir=run_dir,
                        event_sink=sink,
                    )
                    if cfg.name == "buffer_replay":
                        store = services.buffer
                        services.buffer = None
                        record.episodes_total = len(store.pending())
                        summary = run_buffer_replay(store, cfg, services)
                    else:
                        if cohort_ids is None:
                            cohort_ids = select_cohort(services.cohort, cfg.patient_limit)
                        record.episodes_total = len(cohort_ids)
                        summary, _results = run_single_config(cfg, services, cohort_ids)
                    payload = summary.to_dict()
                    payload["config"] = cfg.to_dict()
                    record.summary = payload
                    record.state = "completed"
                except Exception as exc:
                    logger.exception("run %s failed", record.run_id)
                    record.state = "failed"
                    record.error = f"{type(exc).__name__}: {exc}"
                    record.event_log.append(
                        "run_completed", {"run_id": record.run_id, "error": record.error}
                    )
                finally:
                    if record.config.name == "buffer_replay":
                        self.release_replay()

        threading.Thread(target=execute, daemon=True).start()
        return [record.run_id for record in records]


DEFAULT_POLICY = {
    "include_prob": {"follow_up": 1.0, "meds": 0.8, "education": 0.54, "monitoring": 0.54},
    "repair_prob": 0.9,
    "confidence": {"mean": 0.88, "spread": 0.05},
}


def _parse_config_item(item: Any, seed: int, limit: int) -> RunConfig:
    if isinstance(item, str):
        if item not in CONFIG_FLAGS:
            raise _api_error(400, "invalid_config", f"unknown config name {item!r}")
        return RunConfig(item, seed=seed, patient_limit=limit)
    if isinstance(item, dict):
        name = item.get("name", "")
        if name not in CONFIG_FLAGS:
            raise _api_error(400, "invalid_config", f"unknown config name {name!r}")
        allowed = {k: v for k, v in item.items() if k in RunConfig.__dataclass_fields__}
        allowed.setdefault("seed", seed)
        allowed.setdefault("patient_limit", limit)
        try:
            return RunConfig(**allowed)
        except (TypeError, ValueError) as exc:
            raise _api_error(400, "invalid_config", str(exc))
    raise _api_error(400, "invalid_config", "config items must be names or objects")


def create_app(settings: ServiceSettings | None = None) -> FastAPI:
    settings = settings or ServiceSettings()
    registry = RunRegistry(settings)
    app = FastAPI(title="planaudit", version=__version__)
    app.state.registry = registry
    app.state.settings = settings

    app.add_middleware(
        CORSMiddleware,
        allow_origins=settings.cors_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(HTTPException)
    async def http_error_handler(_request: Request, exc: HTTPException) -> JSONResponse:
        detail = exc.detail
        if not isinstance(detail, dict) or "code" not in detail:
            detail = {"code": str(exc.status_code), "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content={"error": detail})

    def check_auth(request: Request) -> None:
        if settings.bearer_token is None:
            return
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {settings.bearer_token}":
            raise _api_error(401, "unauthorized", "missing or invalid bearer token")

    @app.get("/api/health")
    def health() -> dict[str, Any]:
        backend_configured = bool(
            os.environ.get(ENV_ENDPOINT) and os.environ.get(ENV_API_KEY)
        )
        return {
            "status": "ok",
            "version": __version__,
            "backend_configured": backend_configured,
        }

    @app.post("/api/runs", status_code=202)
    def post_runs(body: dict[str, Any], request: Request) -> dict[str, Any]:
        check_auth(request)
        configs_raw = body.get("configs")
        if not isinstance(configs_raw, list) or not configs_raw:
            raise _api_error(400, "invalid_config", '"configs" must be a non-empty list')
        seed = int(body.get("seed", settings.seed))
        limit = int(body.get("limit", settings.patient_limit))
        configs = [_parse_config_item(item, seed, limit) for item in configs_raw]
        if any(cfg.name == "buffer_replay" for cfg in configs):
            if not registry.buffer().pending():
                raise _api_error(409, "empty_buffer", "no pending entries to replay")
            if not registry.try_acquire_replay():
                raise _api_error(409, "replay_active", "a replay run is already active")
        return {"run_ids": registry.launch(configs)}

    @app.get("/api/runs")
    def list_runs(request: Request) -> list[dict[str, Any]]:
        check_auth(request)
        return [record.handle() for record in registry.all_records()]

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str, request: Request) -> dict[str, Any]:
        check_auth(request)
        return registry.get(run_id).handle()

    @app.get("/api/runs/{run_id}/samples")
    def get_samples(
        run_id: str, request: Request, offset: int = 0, limit: int = 50
    ) -> dict[str, Any]:
        check_auth(request)
        registry.get(run_id)  # 404 when unknown
        samples_dir = settings.runs_root / run_id / "samples"
        files = sorted(samples_dir.glob("*.json")) if samples_dir.exists() else []
        page = files[offset : offset + limit]
        items = [json.loads(p.read_text(encoding="utf-8")) for p in page]
        next_offset = offset + len(page)
        return {
            "items": items,
            "offset": offset,
            "limit": limit,
            "total": len(files),
            "next_offset": next_offset if next_offset < len(files) else None,
        }

    @app.get("/api/runs/{run_id}/events")
    def get_events(run_id: str, request: Request) -> StreamingResponse:
        check_auth(request)
        record = registry.get(run_id)
        last_id_raw = request.headers.get("Last-Event-Id") or request.query_params.get(
            "last_event_id", "0"
        )
        try:
            after = int(last_id_raw)
        except ValueError:
            after = 0

        def stream() -> Iterator[str]:
            for event in record.event_log.subscribe(after):
                yield f"id: {event['seq']}\ndata: {json.dumps(event, ensure_ascii=False)}\n\n"

        return StreamingResponse(
            stream(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    @app.get("/api/buffer")
    def get_buffer(request: Request) -> list[dict[str, Any]]:
        check_auth(request)
        return [entry.to_dict() for entry in registry.buffer().pending()]

    @app.post("/api/replay", status_code=202)
    def post_replay(request: Request, body: dict[str, Any] | None = None) -> dict[str, Any]:
        check_auth(request)
        if not registry.buffer().pending():
            raise _api_error(409, "empty_buffer", "no pending entries to replay")
        if not registry.try_acquire_replay():
            raise _api_error(409, "replay_active", "a replay run is already active")
        seed = int((body or {}).get("seed", settings.seed))
        cfg = RunConfig("buffer_replay", seed=seed, patient_limit=settings.patient_limit)
        run_ids = registry.launch([cfg])
        return {"run_id": run_ids[0]}

    if settings.ui_dir and Path(settings.ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(settings.ui_dir), html=True), name="ui")

    return app
