"""Command-line front door: ingest, run, replay, report, serve.

Exit codes: 0 success, 1 run-level failure, 2 usage error. Flags override
config-file values; environment variables are used only for secrets (the
HTTP backend credential).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from .buffer import DiscrepancyBuffer
from .fhir import ActiveFilterPolicy, assemble_bundles, load_ndjson
from .guidelines import index_chunks, load_chunks
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
from .reports import render_csv, render_markdown, render_text
from .service import DEFAULT_POLICY, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, ServiceSettings, create_app
from .snapshot import is_eligible, summarize

ABLATION_NAMES = ("baseline", "context_cache", "self_improve", "cache_and_self_improve")


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """Reliability-evaluation harness for LLM-driven discharge planning."""


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config file: {exc}")


def _make_cohort(cohort: str, policy: ActiveFilterPolicy):
    if cohort.startswith(("http://", "https://")):
        return RestCohort(cohort, policy)
    if not Path(cohort).exists():
        raise click.UsageError(f"cohort path does not exist: {cohort}")
    return FileCohort(cohort, policy)


def _make_backend(backend: str, policy_path: str | None, seed: int):
    if backend == "http":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise click.ClickException(
                f"http backend requires {ENV_ENDPOINT} (and usually {ENV_API_KEY}, {ENV_MODEL})"
            )
        return HttpBackend(
            endpoint,
            api_key=os.environ.get(ENV_API_KEY, ""),
            model=os.environ.get(ENV_MODEL, ""),
        )
    policy = (
        ScriptedPolicy.from_json_file(policy_path)
        if policy_path
        else ScriptedPolicy.from_dict(DEFAULT_POLICY)
    )
    return ScriptedBackend(policy, seed=seed)


@main.command()
@click.option("--path", "path_", required=True, type=click.Path(), help="NDJSON file or directory.")
def ingest(path_: str) -> None:
    """Validate an NDJSON export and print bundle/eligibility counts."""
    try:
        resources, warnings = load_ndjson(path_)
    except OSError as exc:
        raise click.ClickException(str(exc))
    bundles, assembly_warnings = assemble_bundles(resources)
    warnings.extend(assembly_warnings)
    policy = ActiveFilterPolicy()
    from .fhir import filter_active

    eligible = sum(
        1 for b in bundles if is_eligible(summarize(filter_active(b, policy)))
    )
    click.echo(f"resources: {len(resources)}")
    click.echo(f"patients: {len(bundles)}, eligible: {eligible}")
    if warnings:
        click.echo(f"warnings: {len(warnings)}")
        for warning in warnings[:10]:
            click.echo(f"  {warning}")


@main.command()
@click.option("--config", "config_file", type=click.Path(), help="JSON config file; flags override.")
@click.option("--configs", "config_names", default=None,
              help="Comma-separated config names, or 'all'.")
@click.option("--cohort", default=None, help="NDJSON path or FHIR base URL.")
@click.option("--limit", default=None, type=int, help="Patient limit (default 50).")
@click.option("--seed", default=None, type=int, help="Run seed (default 0).")
@click.option("--backend", default=None, type=click.Choice(["scripted", "http"]))
@click.option("--out", "out_dir", default=None, type=click.Path(), help="Output directory.")
@click.option("--policy", "policy_path", default=None, type=click.Path(),
              help="Scripted-policy JSON.")
@click.option("--guidelines", "guidelines_path", default=None, type=click.Path(),
              help="Guideline chunks JSON (omit for an empty index).")
@click.option("--buffer", "buffer_path", default=None, type=click.Path(),
              help="Discrepancy buffer store (default <out>/buffer.jsonl).")
def run(config_file, config_names, cohort, limit, seed, backend, out_dir,
        policy_path, guidelines_path, buffer_path) -> None:
    """Run ablation configurations over a cohort and print the comparison table."""
    file_cfg = _load_config_file(config_file)
    config_names = config_names or file_cfg.get("configs", "baseline")
    cohort = cohort or file_cfg.get("cohort")
    limit = limit if limit is not None else int(file_cfg.get("limit", 50))
    seed = seed if seed is not None else int(file_cfg.get("seed", 0))
    backend = backend or file_cfg.get("backend", "scripted")
    out_dir = out_dir or file_cfg.get("out", "./runs")
    policy_path = policy_path or file_cfg.get("policy")
    guidelines_path = guidelines_path or file_cfg.get("guidelines")
    buffer_path = buffer_path or file_cfg.get("buffer")

    if not cohort:
        raise click.UsageError("--cohort is required (path or URL)")

    if config_names == "all":
        names = list(ABLATION_NAMES)
        include_replay = True
    else:
        names = [n.strip() for n in str(config_names).split(",") if n.strip()]
        include_replay = False
        unknown = [n for n in names if n not in CONFIG_FLAGS]
        if unknown:
            raise click.UsageError(f"unknown config name(s): {', '.join(unknown)}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = DiscrepancyBuffer(buffer_path or out / "buffer.jsonl")
    cohort_source = _make_cohort(cohort, ActiveFilterPolicy())
    index = (
        index_chunks(load_chunks(guidelines_path)) if guidelines_path else index_chunks([])
    )

    def services_for(cfg: RunConfig) -> Services:
        return Services(
            cohort=cohort_source,
            index=index,
            backend=_make_backend(backend, policy_path, cfg.seed),
            cache=ContextCache(),
            buffer=store,
            run_dir=out / cfg.name,
        )

    try:
        cohort_ids = None
        summaries = []
        for name in [n for n in names if n != "buffer_replay"]:
            cfg = RunConfig(name, seed=seed, patient_limit=limit)
            services = services_for(cfg)
            if cohort_ids is None:
                cohort_ids = select_cohort(services.cohort, cfg.patient_limit)
            summary, _results = run_single_config(cfg, services, cohort_ids)
            summaries.append(summary)

        wants_replay = include_replay or "buffer_replay" in names
        if wants_replay:
            if store.pending():
                cfg = RunConfig("buffer_replay", seed=seed, patient_limit=limit)
                services = services_for(cfg)
                services.buffer = None
                summaries.append(run_buffer_replay(store, cfg, services))
            elif "buffer_replay" in names:
                raise click.ClickException("buffer is empty; nothing to replay")
    except click.ClickException:
        raise
    except Exception as exc:
        raise click.ClickException(f"run failed: {type(exc).__name__}: {exc}")

    (out / "comparison.md").write_text(render_markdown(summaries), encoding="utf-8")
    (out / "comparison.csv").write_text(render_csv(summaries), encoding="utf-8")
    click.echo(render_text(summaries))


@main.command()
@click.option("--buffer", "buffer_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--cohort", required=True, help="NDJSON path or FHIR base URL.")
@click.option("--seed", default=0, type=int)
@click.option("--backend", default="scripted", type=click.Choice(["scripted", "http"]))
@click.option("--policy", "policy_path", default=None, type=click.Path())
@click.option("--guidelines", "guidelines_path", default=None, type=click.Path())
def replay(buffer_path, out_dir, cohort, seed, backend, policy_path, guidelines_path) -> None:
    """Replay pending discrepancy-buffer entries in a dedicated run."""
    store = DiscrepancyBuffer(buffer_path)
    out = Path(out_dir)
    cfg = RunConfig("buffer_replay", seed=seed)
    services = Services(
        cohort=_make_cohort(cohort, ActiveFilterPolicy()),
        index=(
            index_chunks(load_chunks(guidelines_path))
            if guidelines_path
            else index_chunks([])
        ),
        backend=_make_backend(backend, policy_path, seed),
        cache=ContextCache(),
        buffer=None,
        run_dir=out / cfg.name,
    )
    try:
        summary = run_buffer_replay(store, cfg, services)
    except EmptyBuffer:
        raise click.ClickException("buffer is empty; nothing to replay")
    click.echo(render_text([summary]))


@main.command()
@click.option("--run-dir", "run_dir", required=True, type=click.Path())
@click.option("--format", "fmt", default="md", type=click.Choice(["csv", "md", "json"]))
def report(run_dir, fmt) -> None:
    """Render the comparison tables from stored run summaries."""
    from .harness import RunSummary

    root = Path(run_dir)
    summary_files = (
        [root / "summary.json"]
        if (root / "summary.json").exists()
        else sorted(root.glob("*/summary.json"))
    )
    if not summary_files:
        raise click.ClickException(f"no summary.json under {root}")
    payloads = []
    for path in summary_files:
        try:
            payloads.append(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise click.ClickException(f"corrupt summary {path}: {exc}")
    if fmt == "json":
        click.echo(json.dumps(payloads if len(payloads) > 1 else payloads[0], indent=2))
        return
    summaries = [
        RunSummary.from_dict({k: v for k, v in p.items() if k != "config"})
        for p in payloads
    ]
    click.echo(render_csv(summaries) if fmt == "csv" else render_markdown(summaries))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--cohort", default=None, help="NDJSON path or FHIR base URL.")
@click.option("--runs-root", default="./data/runs", type=click.Path())
@click.option("--buffer", "buffer_path", default="./data/discrepancy_buffer.jsonl",
              type=click.Path())
@click.option("--backend", default="scripted", type=click.Choice(["scripted", "http"]))
@click.option("--policy", "policy_path", default=None, type=click.Path())
@click.option("--guidelines", "guidelines_path", default=None, type=click.Path())
@click.option("--ui-dir", default=None, type=click.Path(), help="Static dashboard assets.")
@click.option("--seed", default=0, type=int)
@click.option("--limit", default=50, type=int)
def serve(host, port, cohort, runs_root, buffer_path, backend, policy_path,
          guidelines_path, ui_dir, seed, limit) -> None:
    """Boot the HTTP evaluation service until signalled."""
    import uvicorn

    settings = ServiceSettings(
        runs_root=Path(runs_root),
        cohort=cohort,
        guidelines_path=Path(guidelines_path) if guidelines_path else None,
        buffer_path=Path(buffer_path),
        backend=backend,
        policy_path=Path(policy_path) if policy_path else None,
        seed=seed,
        patient_limit=limit,
        ui_dir=Path(ui_dir) if ui_dir else None,
    )
    uvicorn.run(create_app(settings), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
