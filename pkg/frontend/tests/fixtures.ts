// Reference-run fixtures shared by the dashboard tests.

import type { BufferEntry, RunHandle, RunSummary } from "../src/api.js";

export function summaryFixture(
  configName: string,
  n: number,
  coverage: number,
  latencyS: number,
  overrides: Partial<RunSummary> = {},
): RunSummary {
  return {
    config_name: configName,
    n,
    coverage_all_rate: coverage,
    rate_follow_up: 0.96,
    rate_meds: 0.8,
    rate_education: 0.54,
    rate_monitoring: 0.54,
    brier: 0.544,
    ece: 0.564,
    ece_meanconf: 0.5,
    fail_rate: 0.66,
    high_conf_error_rate: 0.66,
    mean_drift_l1: 0.0,
    avg_confidence: 0.881,
    mean_latency_s: latencyS,
    episodes_per_min: 3.16,
    pass_count: 17,
    fail_count: 33,
    violation_counts: {},
    ...overrides,
  };
}

// Coverage/latency pairs from the reference ablation table.
export const REFERENCE_SUMMARIES: RunSummary[] = [
  summaryFixture("baseline", 50, 0.32, 17.42),
  summaryFixture("context_cache", 50, 0.52, 11.83),
  summaryFixture("self_improve", 50, 0.86, 19.65),
  summaryFixture("cache_and_self_improve", 50, 0.86, 18.7),
  summaryFixture("buffer_replay", 7, 1.0, 27.78),
];

export function runHandleFixture(summary: RunSummary, index: number): RunHandle {
  return {
    run_id: `${summary.config_name}-${String(index).padStart(4, "0")}`,
    state: "completed",
    config: { name: summary.config_name, seed: 7 },
    progress: { episodes_done: summary.n, episodes_total: summary.n },
    summary,
    error: null,
  };
}

export function bufferEntryFixture(
  index: number,
  replayed = false,
  repaired = false,
): BufferEntry {
  return {
    entry_id: `baseline-s7:baseline-${String(index).padStart(3, "0")}-p${String(index + 1).padStart(3, "0")}`,
    patient_id: `p${String(index + 1).padStart(3, "0")}`,
    run_id: "baseline-s7",
    config_name: "baseline",
    confidence: 0.88,
    missing: ["patient_education", "symptom_monitoring"],
    created_at: `2024-01-01T00:0${index}:00Z`,
    replayed,
    replay_outcome: replayed ? { coverage_all: repaired, run_id: "buffer_replay-0001" } : null,
  };
}
