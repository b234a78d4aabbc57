"""Comparison-table rendering: ablation summary, safety metrics, Pareto listing.

All numbers use fixed decimal formatting (3 decimals for rates, 2 for
seconds and throughput) so stdout tables and CSV files are stable under
locale changes.
"""

from __future__ import annotations

import io
from typing import Sequence

from .harness import ParetoPoint, RunSummary, pareto_frontier

ABLATION_COLUMNS = (
    "Configuration", "N", "Coverage", "F/Up", "Meds", "Edu.", "Monitor",
    "Brier", "ECE", "Lat. (s)", "Ep./min",
)

SAFETY_COLUMNS = (
    "Configuration", "N", "Pass", "Fail", "Fail Rate", "Coverage",
    "Drift (L1)", "HC Err", "Avg. Conf.",
)


def _rate(value: float) -> str:
    return f"{value:.3f}"


def _secs(value: float) -> str:
    return f"{value:.2f}"


def ablation_row(summary: RunSummary) -> list[str]:
    return [
        summary.config_name,
        str(summary.n),
        _rate(summary.coverage_all_rate),
        _rate(summary.rate_follow_up),
        _rate(summary.rate_meds),
        _rate(summary.rate_education),
        _rate(summary.rate_monitoring),
        _rate(summary.brier),
        _rate(summary.ece),
        _secs(summary.mean_latency_s),
        _secs(summary.episodes_per_min),
    ]


def safety_row(summary: RunSummary) -> list[str]:
    # Coverage is the only violation type emitted in v1, so the count of
    # episodes with a coverage violation equals the fail count.
    coverage_violations = summary.fail_count
    return [
        summary.config_name,
        str(summary.n),
        str(summary.pass_count),
        str(summary.fail_count),
        _rate(summary.fail_rate),
        str(coverage_violations),
        _rate(summary.mean_drift_l1),
        str(round(summary.high_conf_error_rate * summary.n)),
        _rate(summary.avg_confidence),
    ]


def _markdown_table(columns: Sequence[str], rows: list[list[str]]) -> str:
    lines = [
        "| " + " | ".join(columns) + " |",
        "| " + " | ".join("---" for _ in columns) + " |",
    ]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines)


def _csv_table(columns: Sequence[str], rows: list[list[str]]) -> str:
    import csv

    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return out.getvalue()


def pareto_points(summaries: Sequence[RunSummary]) -> list[ParetoPoint]:
    return [
        ParetoPoint(
            config_name=s.config_name,
            coverage_all_rate=s.coverage_all_rate,
            mean_latency_s=s.mean_latency_s,
        )
        for s in summaries
    ]


def pareto_listing(summaries: Sequence[RunSummary]) -> str:
    if not summaries:
        return "Pareto frontier: (no runs)"
    points = pareto_points(summaries)
    frontier = pareto_frontier(points)
    lines = ["Pareto frontier (coverage up, latency down):"]
    for point in frontier:
        lines.append(
            f"  {point.config_name}: coverage {_rate(point.coverage_all_rate)}, "
            f"latency {_secs(point.mean_latency_s)}s"
        )
    dominated = [p.config_name for p in points if p.dominated]
    if dominated:
        lines.append(f"  dominated: {', '.join(dominated)}")
    return "\n".join(lines)


def render_markdown(summaries: Sequence[RunSummary]) -> str:
    ablation = _markdown_table(ABLATION_COLUMNS, [ablation_row(s) for s in summaries])
    safety = _markdown_table(SAFETY_COLUMNS, [safety_row(s) for s in summaries])
    return (
        "## Ablation summary\n\n" + ablation
        + "\n\n## Safety metrics\n\n" + safety
        + "\n\n## " + pareto_listing(summaries).replace("\n", "\n")
        + "\n"
    )


def render_csv(summaries: Sequence[RunSummary]) -> str:
    ablation = _csv_table(ABLATION_COLUMNS, [ablation_row(s) for s in summaries])
    safety = _csv_table(SAFETY_COLUMNS, [safety_row(s) for s in summaries])
    return ablation + "\n" + safety


def render_text(summaries: Sequence[RunSummary]) -> str:
    """Fixed-width stdout table."""
    rows = [list(ABLATION_COLUMNS)] + [ablation_row(s) for s in summaries]
    widths = [max(len(row[i]) for row in rows) for i in range(len(ABLATION_COLUMNS))]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in rows
    ]
    lines.insert(1, "  ".join("-" * w for w in widths))
    safety_rows = [list(SAFETY_COLUMNS)] + [safety_row(s) for s in summaries]
    safety_widths = [
        max(len(row[i]) for row in safety_rows) for i in range(len(SAFETY_COLUMNS))
    ]
    safety_lines = [
        "  ".join(cell.ljust(safety_widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in safety_rows
    ]
    safety_lines.insert(1, "  ".join("-" * w for w in safety_widths))
    return (
        "\n".join(lines)
        + "\n\n"
        + "\n".join(safety_lines)
        + "\n\n"
        + pareto_listing(summaries)
        + "\n"
    )
