import { describe, expect, it } from "vitest";

import {
  acceptLogEvent,
  emptyLogState,
  formatLogLine,
  type LogEvent,
  type LogState,
} from "../src/sse.js";

function runEvents(episodes: number): LogEvent[] {
  const events: LogEvent[] = [];
  let seq = 0;
  for (let i = 0; i < episodes; i++) {
    events.push({
      seq: ++seq,
      type: "episode_started",
      episode_id: `baseline-${String(i).padStart(3, "0")}-p${i + 1}`,
    });
    events.push({
      seq: ++seq,
      type: "episode_completed",
      episode_id: `baseline-${String(i).padStart(3, "0")}-p${i + 1}`,
      skipped: false,
      verdict: i % 3 === 0 ? "FAIL" : "PASS",
      lane: i % 3 === 0 ? "Red" : "Green",
      confidence: 0.87,
      drift_l1: 0.0,
    });
  }
  events.push({ seq: ++seq, type: "run_completed", run_id: "baseline-0001" });
  return events;
}

function feed(state: LogState, events: LogEvent[]): LogState {
  return events.reduce((acc, event) => acceptLogEvent(acc, event), state);
}

describe("log stream dedup", () => {
  it("a 50-episode run yields 2N+1 lines", () => {
    const events = runEvents(50);
    const state = feed(emptyLogState(), events);
    expect(state.events).toHaveLength(2 * 50 + 1);
    expect(state.done).toBe(true);
  });

  it("forced reconnect with overlap produces no duplicate lines", () => {
    const events = runEvents(50);
    // Connection drops after 60 events; the resumed stream replays an
    // overlapping window before continuing (server replays from an older id).
    let state = feed(emptyLogState(), events.slice(0, 60));
    expect(state.lastSeq).toBe(60);
    state = feed(state, events.slice(40)); // 20-event overlap
    expect(state.events).toHaveLength(2 * 50 + 1);
    const seqs = state.events.map((e) => e.seq);
    expect(new Set(seqs).size).toBe(seqs.length);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
    expect(state.done).toBe(true);
  });

  it("stale events never regress lastSeq", () => {
    const events = runEvents(3);
    const state = feed(emptyLogState(), events);
    const replayed = acceptLogEvent(state, events[0]);
    expect(replayed).toBe(state); // unchanged reference: nothing appended
  });

  it("does not mutate prior state", () => {
    const first = emptyLogState();
    const second = acceptLogEvent(first, runEvents(1)[0]);
    expect(first.events).toHaveLength(0);
    expect(second.events).toHaveLength(1);
  });
});

describe("log line formatting", () => {
  it("formats lifecycle lines", () => {
    const [started, completed] = runEvents(1);
    expect(formatLogLine(started)).toContain("started baseline-000-p1");
    expect(formatLogLine(completed)).toContain("FAIL");
    expect(formatLogLine(completed)).toContain("conf=0.87");
    expect(
      formatLogLine({ seq: 9, type: "run_completed", run_id: "x" }),
    ).toContain("run completed");
    expect(
      formatLogLine({ seq: 9, type: "run_completed", error: "boom" }),
    ).toContain("run failed: boom");
  });

  it("marks skipped episodes", () => {
    expect(
      formatLogLine({
        seq: 2,
        type: "episode_completed",
        episode_id: "e",
        skipped: true,
      }),
    ).toContain("skipped");
  });
});
