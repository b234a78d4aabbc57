// Pure view-model builders. Every displayed number is an API response field;
// the only client-side computation is formatting and the dominance *selection*
// over API-provided (coverage, latency) pairs for the frontier polyline.

import type { RunHandle, RunSummary } from "./api.js";

export const COMPARISON_COLUMNS = [
  "Configuration",
  "N",
  "Coverage",
  "F/Up",
  "Meds",
  "Edu.",
  "Monitor",
  "Brier",
  "ECE",
  "Fail Rate",
  "HC Err Rate",
  "Lat. (s)",
  "Ep./min",
] as const;

export function formatRate(value: number): string {
  return value.toFixed(3);
}

export function formatSeconds(value: number): string {
  return value.toFixed(2);
}

export interface ComparisonRow {
  configName: string;
  cells: string[];
}

export function comparisonRows(summaries: RunSummary[]): ComparisonRow[] {
  return summaries.map((s) => ({
    configName: s.config_name,
    cells: [
      s.config_name,
      String(s.n),
      formatRate(s.coverage_all_rate),
      formatRate(s.rate_follow_up),
      formatRate(s.rate_meds),
      formatRate(s.rate_education),
      formatRate(s.rate_monitoring),
      formatRate(s.brier),
      formatRate(s.ece),
      formatRate(s.fail_rate),
      formatRate(s.high_conf_error_rate),
      formatSeconds(s.mean_latency_s),
      formatSeconds(s.episodes_per_min),
    ],
  }));
}

export interface ScatterPoint {
  configName: string;
  coverage: number;
  latencyS: number;
  onFrontier: boolean;
}

// Nondominated selection (coverage up, latency down): a point is dominated
// when another has coverage >= and latency <= with at least one strict.
export function frontierConfigs(
  points: { configName: string; coverage: number; latencyS: number }[],
): string[] {
  const nondominated = points.filter(
    (p) =>
      !points.some(
        (q) =>
          q !== p &&
          q.coverage >= p.coverage &&
          q.latencyS <= p.latencyS &&
          (q.coverage > p.coverage || q.latencyS < p.latencyS),
      ),
  );
  return nondominated
    .sort((a, b) => a.latencyS - b.latencyS || b.coverage - a.coverage)
    .map((p) => p.configName);
}

export function scatterPoints(summaries: RunSummary[]): ScatterPoint[] {
  const raw = summaries.map((s) => ({
    configName: s.config_name,
    coverage: s.coverage_all_rate,
    latencyS: s.mean_latency_s,
  }));
  const frontier = new Set(frontierConfigs(raw));
  return raw.map((p) => ({ ...p, onFrontier: frontier.has(p.configName) }));
}

export interface ScatterLayout {
  width: number;
  height: number;
  dots: { x: number; y: number; point: ScatterPoint }[];
  // Frontier polyline in latency order, as "x1,y1 x2,y2 ..." for <polyline>.
  polyline: string;
}

export function scatterLayout(
  points: ScatterPoint[],
  width = 420,
  height = 260,
  pad = 36,
): ScatterLayout {
  const latencies = points.map((p) => p.latencyS);
  const minLat = Math.min(...latencies, 0);
  const maxLat = Math.max(...latencies, 1);
  const spanLat = maxLat - minLat || 1;
  const x = (lat: number) => pad + ((lat - minLat) / spanLat) * (width - 2 * pad);
  const y = (cov: number) => height - pad - cov * (height - 2 * pad);

  const dots = points.map((point) => ({
    x: x(point.latencyS),
    y: y(point.coverage),
    point,
  }));
  const polyline = dots
    .filter((d) => d.point.onFrontier)
    .sort((a, b) => a.point.latencyS - b.point.latencyS)
    .map((d) => `${d.x.toFixed(1)},${d.y.toFixed(1)}`)
    .join(" ");
  return { width, height, dots, polyline };
}

export function laneBadgeClass(lane: "Green" | "Yellow" | "Red"): string {
  return { Green: "badge-green", Yellow: "badge-yellow", Red: "badge-red" }[lane];
}

export function runStateLabel(run: RunHandle): string {
  if (run.state === "running") {
    return `running ${run.progress.episodes_done}/${run.progress.episodes_total}`;
  }
  return run.state;
}

export function anyNonTerminal(runs: RunHandle[]): boolean {
  return runs.some((r) => r.state === "queued" || r.state === "running");
}

export function completedWithSummary(runs: RunHandle[]): RunSummary[] {
  return runs
    .filter((r) => r.state === "completed" && r.summary !== null)
    .map((r) => r.summary as RunSummary);
}
