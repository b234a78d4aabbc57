// DOM rendering. State lives on the server; these functions re-render whole
// sections from API payloads so a page reload reconstructs the same view.

import type { ApiClient, BufferEntry, RunHandle, Sample } from "./api.js";
import {
  COMPARISON_COLUMNS,
  comparisonRows,
  completedWithSummary,
  formatRate,
  laneBadgeClass,
  runStateLabel,
  scatterLayout,
  scatterPoints,
} from "./model.js";
import { formatLogLine, type LogState } from "./sse.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderRunList(
  container: HTMLElement,
  runs: RunHandle[],
  onSelect: (runId: string) => void,
): void {
  container.replaceChildren();
  if (runs.length === 0) {
    container.append(el("p", "empty", "No runs yet. Launch one above."));
    return;
  }
  const table = el("table", "run-table");
  const head = el("tr");
  for (const column of ["Run", "State", "Coverage", "Actions"]) {
    head.append(el("th", undefined, column));
  }
  table.append(head);
  for (const run of runs) {
    const row = el("tr");
    row.append(el("td", undefined, run.run_id));
    const state = el("td", `state-${run.state}`, runStateLabel(run));
    if (run.error) state.title = run.error;
    row.append(state);
    row.append(
      el(
        "td",
        undefined,
        run.summary ? formatRate(run.summary.coverage_all_rate) : "-",
      ),
    );
    const actions = el("td");
    const logButton = el("button", "small", "live log");
    logButton.addEventListener("click", () => onSelect(run.run_id));
    actions.append(logButton);
    row.append(actions);
    table.append(row);
  }
  container.append(table);
}

export function renderComparison(container: HTMLElement, runs: RunHandle[]): void {
  container.replaceChildren();
  const summaries = completedWithSummary(runs);
  const skipped = runs.length - summaries.length;
  if (summaries.length === 0) {
    container.append(el("p", "empty", "No completed runs to compare."));
    return;
  }
  const table = el("table", "comparison-table");
  const head = el("tr");
  for (const column of COMPARISON_COLUMNS) head.append(el("th", undefined, column));
  table.append(head);
  for (const row of comparisonRows(summaries)) {
    const tr = el("tr");
    for (const cell of row.cells) tr.append(el("td", undefined, cell));
    table.append(tr);
  }
  container.append(table);
  if (skipped > 0) {
    container.append(el("p", "note", `${skipped} incomplete run(s) excluded.`));
  }
  if (summaries.length > 1) {
    container.append(renderScatter(runs));
  }
}

function renderScatter(runs: RunHandle[]): SVGSVGElement {
  const points = scatterPoints(completedWithSummary(runs));
  const layout = scatterLayout(points);
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("width", String(layout.width));
  svg.setAttribute("height", String(layout.height));
  svg.setAttribute("class", "scatter");

  if (layout.polyline) {
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute("points", layout.polyline);
    line.setAttribute("class", "frontier-line");
    line.setAttribute("fill", "none");
    svg.append(line);
  }
  for (const dot of layout.dots) {
    const circle = document.createElementNS("http://www.w3.org/2000/svg", "circle");
    circle.setAttribute("cx", dot.x.toFixed(1));
    circle.setAttribute("cy", dot.y.toFixed(1));
    circle.setAttribute("r", "5");
    circle.setAttribute(
      "class",
      dot.point.onFrontier ? "dot dot-frontier" : "dot dot-dominated",
    );
    svg.append(circle);
    const label = document.createElementNS("http://www.w3.org/2000/svg", "text");
    label.setAttribute("x", (dot.x + 7).toFixed(1));
    label.setAttribute("y", (dot.y - 7).toFixed(1));
    label.setAttribute("class", "dot-label");
    label.textContent = dot.point.configName;
    svg.append(label);
  }
  return svg;
}

export function renderSamples(
  container: HTMLElement,
  samples: Sample[],
  total: number,
): void {
  container.replaceChildren();
  if (samples.length === 0) {
    container.append(el("p", "empty", "No samples."));
    return;
  }
  container.append(el("p", "note", `${samples.length} of ${total} episodes`));
  for (const sample of samples) {
    const card = el("details", "sample-card");
    const header = el("summary");
    header.append(el("span", "sample-id", sample.episode_id));
    if (sample.audit) {
      header.append(el("span", `badge ${laneBadgeClass(sample.audit.lane)}`, sample.audit.lane));
      header.append(el("span", "sample-verdict", sample.audit.verdict));
    } else if (sample.skipped) {
      header.append(el("span", "badge badge-grey", `skipped: ${sample.skip_reason}`));
    }
    card.append(header);
    if (sample.plan) {
      const list = el("ul", "action-list");
      for (const action of sample.plan.actions) {
        list.append(
          el("li", undefined, `${action.type}: ${action.details} (${action.deadline_hours}h)`),
        );
      }
      card.append(list);
    }
    if (sample.audit && sample.audit.violations.length > 0) {
      const violations = el("ul", "violation-list");
      for (const violation of sample.audit.violations) {
        violations.append(el("li", undefined, violation));
      }
      card.append(violations);
    }
    container.append(card);
  }
}

export function renderBuffer(
  container: HTMLElement,
  entries: BufferEntry[],
  replayDisabled: boolean,
  onReplay: () => void,
): void {
  container.replaceChildren();
  const button = el("button", "replay-button", "Replay all");
  button.disabled = replayDisabled || entries.length === 0;
  button.addEventListener("click", onReplay);
  container.append(button);

  if (entries.length === 0) {
    const empty = el("div", "empty-state");
    empty.append(el("div", "empty-art", "∅"));
    empty.append(el("p", "empty", "Discrepancy buffer is empty."));
    container.append(empty);
    return;
  }
  const table = el("table", "buffer-table");
  const head = el("tr");
  for (const column of ["Entry", "Patient", "Confidence", "Missing", "Outcome"]) {
    head.append(el("th", undefined, column));
  }
  table.append(head);
  for (const entry of entries) {
    const row = el("tr");
    row.append(el("td", undefined, entry.entry_id));
    row.append(el("td", undefined, entry.patient_id));
    row.append(el("td", undefined, formatRate(entry.confidence)));
    const chips = el("td");
    for (const missing of entry.missing) {
      chips.append(el("span", "chip", missing));
    }
    row.append(chips);
    const outcome = el("td");
    if (entry.replayed && entry.replay_outcome) {
      outcome.append(
        el(
          "span",
          entry.replay_outcome.coverage_all ? "badge badge-green" : "badge badge-red",
          entry.replay_outcome.coverage_all ? "repaired" : "still failing",
        ),
      );
    } else {
      outcome.append(el("span", "badge badge-grey", "pending"));
    }
    row.append(outcome);
    table.append(row);
  }
  container.append(table);
}

export function renderLog(
  container: HTMLElement,
  state: LogState,
  reconnecting: boolean,
): void {
  container.replaceChildren();
  for (const event of state.events) {
    const line = el("div", "log-line", formatLogLine(event));
    if (event.type === "episode_completed" && event.lane === "Red") {
      line.classList.add("log-red");
    }
    container.append(line);
  }
  if (reconnecting) {
    container.append(el("div", "log-line log-reconnect", "... reconnecting"));
  }
  container.scrollTop = container.scrollHeight;
}

export function showError(banner: HTMLElement, message: string | null): void {
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

export function setupLaunchForm(
  form: HTMLFormElement,
  onLaunch: (configs: string[], seed: number, limit: number) => void,
): void {
  form.addEventListener("submit", (submitEvent) => {
    submitEvent.preventDefault();
    const configs = Array.from(
      form.querySelectorAll<HTMLInputElement>('input[name="config"]:checked'),
    ).map((input) => input.value);
    const seed = Number(
      form.querySelector<HTMLInputElement>('input[name="seed"]')?.value ?? "0",
    );
    const limit = Number(
      form.querySelector<HTMLInputElement>('input[name="limit"]')?.value ?? "50",
    );
    onLaunch(configs, seed, limit);
  });
}

export type { ApiClient };
