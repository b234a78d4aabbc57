"""In-process event log powering live progress streams.

One log per run; sequence numbers are 1-based, strictly increasing and
gap-free. Subscribers can replay from any sequence number and block for new
events until the log is closed by a terminal event.
"""

from __future__ import annotations

import threading
from typing import Any, Iterator


class RunEventLog:
    def __init__(self) -> None:
        self._events: list[dict[str, Any]] = []
        self._cond = threading.Condition()
        self._closed = False

    def append(self, event_type: str, payload: dict[str, Any]) -> int:
        """Append an event; returns its sequence number."""
        with self._cond:
            seq = len(self._events) + 1
            event = {"seq": seq, "type": event_type, **payload}
            self._events.append(event)
            if event_type == "run_completed":
                self._closed = True
            self._cond.notify_all()
            return seq

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    def events_after(self, after_seq: int) -> list[dict[str, Any]]:
        with self._cond:
            return self._events[after_seq:]

    def __len__(self) -> int:
        with self._cond:
            return len(self._events)

    def subscribe(self, after_seq: int = 0, poll_timeout: float = 0.5) -> Iterator[dict[str, Any]]:
        """Yield events with seq > after_seq; ends after run_completed."""
        cursor = after_seq
        while True:
            with self._cond:
                while len(self._events) <= cursor and not self._closed:
                    self._cond.wait(timeout=poll_timeout)
                batch = self._events[cursor:]
                closed = self._closed
            for event in batch:
                cursor = event["seq"]
                yield event
                if event["type"] == "run_completed":
                    return
            if closed and len(self.events_after(cursor)) == 0:
                return
