"""Deterministic discrete-event kernel.

Simulated time is integer milliseconds. Events are dispatched in strict
(time, seq) order; seq is assigned at scheduling time, so two events at the
same instant dispatch in scheduling order. All randomness is drawn from
labelled streams forked off the master seed, one stream per consumer, so
adding or removing one consumer never perturbs another's draws.

The dispatch sequence is the run's trace: one canonical JSON object per
dispatched event, hashed incrementally with SHA-256. Two runs with the same
seed and scenario produce byte-identical traces.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

SimTime = int


class SchedulingInPastError(Exception):
    """Event time lies before the current simulation clock."""


class DuplicateLabelError(Exception):
    """An RNG stream label was forked twice in one run."""


@dataclass(frozen=True)
class Event:
    time: SimTime
    seq: int
    target: str
    kind: str
    payload: dict


@dataclass
class TraceSummary:
    events_dispatched: int
    final_clock: SimTime
    trace_hash: str


@dataclass
class PendingAction:
    """A command from outside the simulation, applied between dispatches.

    An action is converted into an ordinary event immediately before the
    first dispatched event with time >= apply_at, which keeps the conversion
    point (and hence the consumed seq number) independent of when the action
    arrived in wall-clock terms. That is what makes a live-API run replay
    byte-identically from a scripted action list.
    """

    apply_at: SimTime
    kind: str
    params: dict
    order: int = 0
    result: Optional[dict] = None
    done: threading.Event = field(default_factory=threading.Event)


Handler = Callable[["Engine", Event], None]
Monitor = Callable[["Engine", Event], None]


def canonical_event_line(event: Event) -> str:
    record = {
        "time": event.time,
        "seq": event.seq,
        "target": event.target,
        "kind": event.kind,
        "payload": event.payload,
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class LabelledRandom:
    """RNG stream derived from (master seed, label); same pair, same draws."""

    def __init__(self, master_seed: int, label: str):
        digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
        self.label = label
        self._rng = random.Random(int.from_bytes(digest[:8], "big"))

    def randint(self, a: int, b: int) -> int:
        return self._rng.randint(a, b)

    def random(self) -> float:
        return self._rng.random()

    def randbytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)

    def choice(self, seq):
        return self._rng.choice(seq)


class Engine:
    def __init__(self, seed: int):
        self.seed = seed
        self.clock: SimTime = 0
        self._heap: list[tuple[SimTime, int, str, str, dict]] = []
        self._seq = 0
        self._rng_labels: set[str] = set()
        self._handlers: dict[str, Handler] = {}
        self._monitors: list[Monitor] = []
        self.trace: list[Event] = []
        self._hash = hashlib.sha256()
        self.scheduled_count = 0
        self.dispatched_count = 0
        self.halted = False
        self._trace_sink = None
        self._inbox_lock = threading.Lock()
        self._inbox: list[PendingAction] = []
        self._inbox_counter = 0
        self.action_registry: dict[tuple[int, int], PendingAction] = {}

    # -- randomness ------------------------------------------------------

    def fork_rng(self, label: str) -> LabelledRandom:
        if label in self._rng_labels:
            raise DuplicateLabelError(label)
        self._rng_labels.add(label)
        return LabelledRandom(self.seed, label)

    # -- scheduling --------------------------------------------------------

    def schedule(self, time: SimTime, target: str, kind: str, payload: Optional[dict] = None) -> int:
        if time < self.clock:
            raise SchedulingInPastError(f"t={time} < clock={self.clock}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (time, seq, target, kind, payload or {}))
        self.scheduled_count += 1
        return seq

    def register(self, target: str, handler: Handler) -> None:
        self._handlers[target] = handler

    def add_monitor(self, monitor: Monitor) -> None:
        self._monitors.append(monitor)

    def set_trace_sink(self, fileobj) -> None:
        self._trace_sink = fileobj

    @property
    def pending_count(self) -> int:
        return len(self._heap)

    # -- external command inbox ---------------------------------------------

    def submit_action(self, kind: str, params: dict, apply_at: Optional[SimTime] = None) -> PendingAction:
        """Thread-safe: queue an operator action for application at apply_at."""
        with self._inbox_lock:
            action = PendingAction(
                apply_at=self.clock if apply_at is None else apply_at,
                kind=kind,
                params=params,
                order=self._inbox_counter,
            )
            self._inbox_counter += 1
            self._inbox.append(action)
            self._inbox.sort(key=lambda a: (a.apply_at, a.order))
        return action

    def _convert_due_actions(self, limit: SimTime) -> None:
        while True:
            with self._inbox_lock:
                if not self._inbox:
                    return
                head = self._inbox[0]
                next_time = self._heap[0][0] if self._heap else None
                due = head.apply_at <= limit and (next_time is None or head.apply_at <= next_time)
                if not due:
                    return
                self._inbox.pop(0)
            at = max(self.clock, head.apply_at)
            self.action_registry[(head.apply_at, head.order)] = head
            self.schedule(at, "soc", "operator-action", {
                "action_kind": head.kind,
                "params": head.params,
                "apply_at": head.apply_at,
                "order": head.order,
            })

    # -- main loop -----------------------------------------------------------

    def _dispatch_one(self) -> Event:
        time, seq, target, kind, payload = heapq.heappop(self._heap)
        self.clock = max(self.clock, time)
        event = Event(time, seq, target, kind, payload)
        self.trace.append(event)
        line = canonical_event_line(event)
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self._trace_sink is not None:
            self._trace_sink.write(line + "\n")
        self.dispatched_count += 1
        handler = self._handlers.get(target)
        if handler is not None:
            handler(self, event)
        for monitor in self._monitors:
            monitor(self, event)
        return event

    def run_until(self, t: SimTime) -> TraceSummary:
        """Dispatch all events with time <= t; clock ends at min(t, last event time)."""
        while not self.halted:
            self._convert_due_actions(t)
            if not self._heap or self._heap[0][0] > t:
                break
            self._dispatch_one()
        if not self.halted and self.clock < t:
            self.clock = t
        return self.summary()

    def run_slice(self, t: SimTime) -> int:
        """Paced variant: dispatch due events up to t, never advancing the
        clock past the last dispatched event. Serve mode calls this in a
        wall-clock loop."""
        dispatched = 0
        while not self.halted:
            self._convert_due_actions(t)
            if not self._heap or self._heap[0][0] > t:
                break
            self._dispatch_one()
            dispatched += 1
        return dispatched

    def halt(self) -> None:
        self.halted = True

    def summary(self) -> TraceSummary:
        return TraceSummary(self.dispatched_count, self.clock, self._hash.hexdigest())

    def trace_lines(self) -> list[str]:
        return [canonical_event_line(e) for e in self.trace]
