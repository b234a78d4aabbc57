// Dashboard entry point: wiring between the API client, SSE log streams and
// the DOM views. Run list polls every 2 s while any run is non-terminal; the
// event stream is used for logs only.

import { ApiClient } from "./api.js";
import { anyNonTerminal } from "./model.js";
import { LogStream } from "./sse.js";
import {
  renderBuffer,
  renderComparison,
  renderLog,
  renderRunList,
  renderSamples,
  setupLaunchForm,
  showError,
} from "./views.js";

declare global {
  interface Window {
    PLANAUDIT_API_BASE?: string;
  }
}

// Single configurable base URL: window override, else same origin.
const baseUrl = window.PLANAUDIT_API_BASE ?? "";
const api = new ApiClient(baseUrl);

const runListEl = document.getElementById("run-list")!;
const comparisonEl = document.getElementById("comparison")!;
const samplesEl = document.getElementById("samples")!;
const bufferEl = document.getElementById("buffer")!;
const logEl = document.getElementById("log")!;
const logTitleEl = document.getElementById("log-title")!;
const errorBanner = document.getElementById("error-banner")!;
const launchForm = document.getElementById("launch-form") as HTMLFormElement;
const healthEl = document.getElementById("health")!;

let activeStream: LogStream | null = null;
let pollTimer: number | undefined;
let replayInFlight = false;

function openLog(runId: string): void {
  activeStream?.close();
  logTitleEl.textContent = `Live log: ${runId}`;
  activeStream = new LogStream(api.eventsUrl(runId), (state, reconnecting) => {
    renderLog(logEl as HTMLElement, state, reconnecting);
  });
  activeStream.connect();
  void loadSamples(runId);
}

async function loadSamples(runId: string): Promise<void> {
  try {
    const page = await api.samples(runId, 0, 50);
    renderSamples(samplesEl as HTMLElement, page.items, page.total);
  } catch {
    renderSamples(samplesEl as HTMLElement, [], 0);
  }
}

async function refreshRuns(): Promise<void> {
  try {
    const runs = await api.listRuns();
    renderRunList(runListEl as HTMLElement, runs, openLog);
    renderComparison(comparisonEl as HTMLElement, runs);
    showError(errorBanner as HTMLElement, null);
    schedulePoll(anyNonTerminal(runs));
  } catch (error) {
    showError(errorBanner as HTMLElement, `Cannot reach server: ${String(error)}`);
    schedulePoll(true);
  }
}

function schedulePoll(active: boolean): void {
  window.clearTimeout(pollTimer);
  pollTimer = window.setTimeout(
    () => void refreshRuns(),
    active ? 2000 : 10000,
  );
}

async function refreshBuffer(): Promise<void> {
  try {
    const entries = await api.buffer();
    renderBuffer(bufferEl as HTMLElement, entries, replayInFlight, () => void doReplay());
  } catch {
    renderBuffer(bufferEl as HTMLElement, [], true, () => undefined);
  }
}

async function doReplay(): Promise<void> {
  replayInFlight = true;
  try {
    const { run_id } = await api.replay();
    openLog(run_id);
    await refreshRuns();
  } catch (error) {
    showError(errorBanner as HTMLElement, "Replay unavailable: buffer empty or already running.");
    console.warn(error);
  } finally {
    replayInFlight = false;
    await refreshBuffer();
  }
}

setupLaunchForm(launchForm, (configs, seed, limit) => {
  if (configs.length === 0) {
    showError(errorBanner as HTMLElement, "Select at least one configuration.");
    return;
  }
  api
    .launchRuns(configs, seed, limit)
    .then(() => refreshRuns())
    .catch((error) =>
      showError(errorBanner as HTMLElement, `Launch failed: ${String(error)}`),
    );
});

api
  .health()
  .then((health) => {
    healthEl.textContent = `service ${health.version} (${
      health.backend_configured ? "LLM backend configured" : "scripted backend"
    })`;
  })
  .catch(() => {
    healthEl.textContent = "service unreachable";
  });

void refreshRuns();
void refreshBuffer();
window.setInterval(() => void refreshBuffer(), 5000);
