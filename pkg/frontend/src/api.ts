// Typed client for the evaluation service. Every URL derives from one base.

export interface RunProgress {
  episodes_done: number;
  episodes_total: number;
}

export interface RunSummary {
  config_name: string;
  n: number;
  coverage_all_rate: number;
  rate_follow_up: number;
  rate_meds: number;
  rate_education: number;
  rate_monitoring: number;
  brier: number;
  ece: number;
  ece_meanconf: number;
  fail_rate: number;
  high_conf_error_rate: number;
  mean_drift_l1: number;
  avg_confidence: number;
  mean_latency_s: number;
  episodes_per_min: number;
  pass_count: number;
  fail_count: number;
  violation_counts: Record<string, number>;
}

export interface RunHandle {
  run_id: string;
  state: "queued" | "running" | "completed" | "failed";
  config: { name: string; seed: number; [key: string]: unknown };
  progress: RunProgress;
  summary: RunSummary | null;
  error: string | null;
}

export interface PlanAction {
  type: string;
  details: string;
  deadline_hours: number;
}

export interface Sample {
  episode_id: string;
  patient_id: string;
  config_name: string;
  plan: { actions: PlanAction[]; confidence: number } | null;
  audit: {
    verdict: "PASS" | "FAIL";
    violations: string[];
    confidence: number;
    drift_l1: number;
    lane: "Green" | "Yellow" | "Red";
  } | null;
  skipped: boolean;
  skip_reason: string | null;
}

export interface SamplePage {
  items: Sample[];
  offset: number;
  limit: number;
  total: number;
  next_offset: number | null;
}

export interface BufferEntry {
  entry_id: string;
  patient_id: string;
  run_id: string;
  config_name: string;
  confidence: number;
  missing: string[];
  created_at: string;
  replayed: boolean;
  replay_outcome: { coverage_all: boolean; run_id: string } | null;
}

export interface ApiErrorBody {
  error: { code: string; message: string };
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = String(response.status);
  let message = response.statusText;
  try {
    const body = (await response.json()) as ApiErrorBody;
    if (body.error) {
      code = body.error.code;
      message = body.error.message;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

export class ApiClient {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.url(path));
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.url(path), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body ?? {}),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string; version: string; backend_configured: boolean }> {
    return this.getJson("/api/health");
  }

  listRuns(): Promise<RunHandle[]> {
    return this.getJson("/api/runs");
  }

  getRun(runId: string): Promise<RunHandle> {
    return this.getJson(`/api/runs/${encodeURIComponent(runId)}`);
  }

  launchRuns(configs: string[], seed: number, limit: number): Promise<{ run_ids: string[] }> {
    return this.postJson("/api/runs", { configs, seed, limit });
  }

  samples(runId: string, offset = 0, limit = 50): Promise<SamplePage> {
    return this.getJson(
      `/api/runs/${encodeURIComponent(runId)}/samples?offset=${offset}&limit=${limit}`,
    );
  }

  buffer(): Promise<BufferEntry[]> {
    return this.getJson("/api/buffer");
  }

  replay(): Promise<{ run_id: string }> {
    return this.postJson("/api/replay", {});
  }

  eventsUrl(runId: string): string {
    return this.url(`/api/runs/${encodeURIComponent(runId)}/events`);
  }
}
