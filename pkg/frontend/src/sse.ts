// Live log stream over server-sent events with resume + duplicate rejection.
//
// The pure reducer (acceptLogEvent) carries the dedup contract: events are
// keyed by their gap-free sequence number, so replaying an overlap after a
// reconnect can never produce duplicate lines. The LogStream class is a thin
// EventSource wrapper around it.

export interface LogEvent {
  seq: number;
  type: "episode_started" | "episode_completed" | "run_completed";
  episode_id?: string;
  patient_id?: string;
  skipped?: boolean;
  verdict?: "PASS" | "FAIL";
  lane?: "Green" | "Yellow" | "Red";
  coverage_all?: boolean;
  confidence?: number;
  drift_l1?: number;
  run_id?: string;
  error?: string;
}

export interface LogState {
  lastSeq: number;
  events: LogEvent[];
  done: boolean;
}

export function emptyLogState(): LogState {
  return { lastSeq: 0, events: [], done: false };
}

// Accepts an event only when it advances the sequence; stale replays after a
// reconnect are dropped. Returns the new state (input state is not mutated).
export function acceptLogEvent(state: LogState, event: LogEvent): LogState {
  if (event.seq <= state.lastSeq) {
    return state;
  }
  return {
    lastSeq: event.seq,
    events: [...state.events, event],
    done: event.type === "run_completed",
  };
}

export function formatLogLine(event: LogEvent): string {
  switch (event.type) {
    case "episode_started":
      return `#${event.seq} started ${event.episode_id}`;
    case "episode_completed":
      if (event.skipped) {
        return `#${event.seq} skipped ${event.episode_id}`;
      }
      return (
        `#${event.seq} ${event.verdict} ${event.episode_id}` +
        ` conf=${event.confidence?.toFixed(2)} drift=${event.drift_l1?.toFixed(3)}`
      );
    case "run_completed":
      return event.error
        ? `#${event.seq} run failed: ${event.error}`
        : `#${event.seq} run completed`;
  }
}

export class LogStream {
  private source: EventSource | null = null;
  state: LogState = emptyLogState();

  constructor(
    private eventsUrl: string,
    private onChange: (state: LogState, reconnecting: boolean) => void,
  ) {}

  // EventSource reconnects on drop but does not forward Last-Event-Id as a
  // header we control here, so resume is made explicit via a query parameter.
  private urlWithResume(): string {
    const sep = this.eventsUrl.includes("?") ? "&" : "?";
    return `${this.eventsUrl}${sep}last_event_id=${this.state.lastSeq}`;
  }

  connect(): void {
    this.close();
    this.source = new EventSource(this.urlWithResume());
    this.source.onmessage = (message: MessageEvent<string>) => {
      const event = JSON.parse(message.data) as LogEvent;
      const next = acceptLogEvent(this.state, event);
      if (next !== this.state) {
        this.state = next;
        this.onChange(this.state, false);
      }
      if (this.state.done) {
        this.close();
      }
    };
    this.source.onerror = () => {
      if (this.state.done) {
        this.close();
        return;
      }
      // Force our own resume URL rather than the browser's default retry.
      this.close();
      this.onChange(this.state, true);
      setTimeout(() => {
        if (!this.state.done) this.connect();
      }, 1000);
    };
  }

  close(): void {
    if (this.source) {
      this.source.close();
      this.source = null;
    }
  }
}
