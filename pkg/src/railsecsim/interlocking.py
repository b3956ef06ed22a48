"""Route locking, Object Controllers, and the unsafe-state predicate.

The interlocking grants a route only when none of its segments is believed
occupied or reserved by another route; it locks the route only after every
point confirms its required position, and only then clears the entry signal.
Beliefs come from received Object Controller statuses, so a forged status
can mislead the interlocking — which is exactly what the safety monitor's
ground-truth predicate is there to catch.

The unsafe-state predicate is this artifact's definition (the underlying
architecture never formalizes one): a state is unsafe iff
  (a) two routes in {locked, occupied} share a segment,
  (b) a signal shows proceed without a locked/occupied route behind it, or
      with a route whose segments hold a foreign train, or
  (c) a point reports moving while belonging to a locked/occupied route.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional


class LayoutError(Exception):
    pass


class UnknownRouteError(Exception):
    pass


@dataclass
class Route:
    id: str
    entry_signal: str
    segments: list[str]
    points: dict[str, str]  # point id -> required position


@dataclass
class TrackLayout:
    segments: list[str]
    adjacency: set  # frozenset pairs
    points: dict[str, str]  # point id -> segment it sits on
    signals: dict[str, str]  # signal id -> segment it guards
    routes: dict[str, Route]

    def conflicting(self, a: str, b: str) -> bool:
        return bool(set(self.routes[a].segments) & set(self.routes[b].segments))


def parse_layout(doc: dict) -> TrackLayout:
    segments = list(doc.get("segments", []))
    if not segments:
        raise LayoutError("layout: no segments")
    seg_set = set(segments)
    adjacency = set()
    for pair in doc.get("adjacency", []):
        if len(pair) != 2 or pair[0] not in seg_set or pair[1] not in seg_set:
            raise LayoutError(f"layout: bad adjacency {pair}")
        adjacency.add(frozenset(pair))
    points = {}
    for raw in doc.get("points", []):
        if raw["segment"] not in seg_set:
            raise LayoutError(f"layout: point {raw['id']} on unknown segment")
        points[raw["id"]] = raw["segment"]
    signals = {}
    for raw in doc.get("signals", []):
        if raw["segment"] not in seg_set:
            raise LayoutError(f"layout: signal {raw['id']} on unknown segment")
        signals[raw["id"]] = raw["segment"]
    routes = {}
    for raw in doc.get("routes", []):
        route = Route(raw["id"], raw["entry_signal"], list(raw["segments"]),
                      dict(raw.get("points", {})))
        if route.entry_signal not in signals:
            raise LayoutError(f"route {route.id}: unknown entry signal")
        if signals[route.entry_signal] != route.segments[0]:
            raise LayoutError(f"route {route.id}: entry signal not at first segment")
        for seg in route.segments:
            if seg not in seg_set:
                raise LayoutError(f"route {route.id}: unknown segment {seg}")
        for a, b in zip(route.segments, route.segments[1:]):
            if frozenset((a, b)) not in adjacency:
                raise LayoutError(f"route {route.id}: segments {a},{b} not adjacent")
        for point in route.points:
            if point not in points:
                raise LayoutError(f"route {route.id}: unknown point {point}")
        routes[route.id] = route
    if not routes:
        raise LayoutError("layout: no routes")
    return TrackLayout(segments, adjacency, points, signals, routes)


class RoutePhase(str, Enum):
    FREE = "free"
    LOCKING = "locking"
    LOCKED = "locked"
    OCCUPIED = "occupied"


ACTIVE_PHASES = (RoutePhase.LOCKING, RoutePhase.LOCKED, RoutePhase.OCCUPIED)
HELD_PHASES = (RoutePhase.LOCKED, RoutePhase.OCCUPIED)


@dataclass
class RouteState:
    """Observable world state the safety predicate runs on.

    phases/believed_occupied/pending_commands/route_train are the
    interlocking's view; signal_aspects, point_positions, and occupancy are
    physical ground truth as reported by the field.
    """

    phases: dict[str, RoutePhase] = field(default_factory=dict)
    believed_occupied: dict[str, bool] = field(default_factory=dict)
    pending_commands: dict[str, dict] = field(default_factory=dict)
    signal_aspects: dict[str, str] = field(default_factory=dict)
    point_positions: dict[str, str] = field(default_factory=dict)
    occupancy: dict[str, Optional[str]] = field(default_factory=dict)
    route_train: dict[str, Optional[str]] = field(default_factory=dict)


def is_unsafe(state: RouteState, layout: TrackLayout) -> tuple[bool, Optional[dict]]:
    """Three-clause safety predicate; returns (verdict, witness)."""
    route_ids = sorted(layout.routes)

    held = [r for r in route_ids if state.phases.get(r) in HELD_PHASES]
    for i, a in enumerate(held):
        for b in held[i + 1:]:
            shared = sorted(set(layout.routes[a].segments) & set(layout.routes[b].segments))
            if shared:
                return True, {"clause": "a", "routes": [a, b], "segment": shared[0]}

    for signal in sorted(layout.signals):
        if state.signal_aspects.get(signal) != "proceed":
            continue
        candidates = [r for r in route_ids
                      if layout.routes[r].entry_signal == signal
                      and state.phases.get(r) in HELD_PHASES]
        if not candidates:
            return True, {"clause": "b", "signal": signal, "reason": "no-held-route"}
        route = candidates[0]
        own_train = state.route_train.get(route)
        for seg in layout.routes[route].segments:
            occupant = state.occupancy.get(seg)
            if occupant is not None and occupant != own_train:
                return True, {"clause": "b", "signal": signal, "route": route,
                              "segment": seg, "train": occupant}

    for point in sorted(layout.points):
        if state.point_positions.get(point) != "moving":
            continue
        for r in route_ids:
            if state.phases.get(r) in HELD_PHASES and point in layout.routes[r].points:
                return True, {"clause": "c", "point": point, "route": r}

    return False, None


@dataclass
class OcCommand:
    cmd_id: str
    element: str
    desired: str

    def to_payload(self) -> bytes:
        return json.dumps({"cmd_id": self.cmd_id, "element": self.element,
                           "desired": self.desired}, sort_keys=True).encode()

    @staticmethod
    def from_payload(data: bytes) -> "OcCommand":
        doc = json.loads(data)
        return OcCommand(doc["cmd_id"], doc["element"], doc["desired"])


@dataclass
class OcStatus:
    element: str
    state: str
    cmd_id: Optional[str] = None
    segment: Optional[str] = None

    def to_payload(self) -> bytes:
        doc = {"element": self.element, "state": self.state}
        if self.cmd_id is not None:
            doc["cmd_id"] = self.cmd_id
        if self.segment is not None:
            doc["segment"] = self.segment
        return json.dumps(doc, sort_keys=True).encode()

    @staticmethod
    def from_payload(data: bytes) -> "OcStatus":
        doc = json.loads(data)
        return OcStatus(doc["element"], doc["state"], doc.get("cmd_id"), doc.get("segment"))


@dataclass
class IlsPort:
    """Callbacks into the surrounding simulation."""
    send_command: Callable[[str, str, str, str], None]  # oc, element, desired, cmd_id
    emit_marker: Callable[[str, dict], None]
    emit_event: Callable[[str, str, dict], None]  # category, severity, details
    schedule_timer: Callable[[int, dict], None]
    clock: Callable[[], int]


@dataclass
class CmdRecord:
    cmd_id: str
    oc: str
    element: str
    desired: str
    route: Optional[str]
    attempts: int
    issued_at: int
    confirmed: bool = False
    gave_up: bool = False


class Interlocking:
    def __init__(self, layout: TrackLayout, oc_by_element: dict[str, str], port: IlsPort,
                 retry_timeout_ms: int = 1500, max_retries: int = 2):
        self.layout = layout
        self.oc_by_element = oc_by_element
        self.port = port
        self.retry_timeout_ms = retry_timeout_ms
        self.max_retries = max_retries
        self.phases: dict[str, RoutePhase] = {r: RoutePhase.FREE for r in layout.routes}
        self.believed_occupied: dict[str, bool] = {s: False for s in layout.segments}
        self.route_train: dict[str, Optional[str]] = {r: None for r in layout.routes}
        self.entered: dict[str, bool] = {r: False for r in layout.routes}
        self.cmds: dict[str, CmdRecord] = {}
        self._cmd_counter = 0
        self._route_cmds: dict[str, list[str]] = {r: [] for r in layout.routes}
        self._signal_cmds: dict[str, str] = {}  # cmd_id -> route, for proceed commands
        self._protective_stops: dict[str, str] = {}  # cmd_id -> route being released

    # -- route requests --------------------------------------------------

    def request_route(self, route_id: str, train: Optional[str]) -> tuple[bool, Optional[str]]:
        route = self.layout.routes.get(route_id)
        if route is None:
            raise UnknownRouteError(route_id)
        if self.phases[route_id] != RoutePhase.FREE:
            self.port.emit_marker("route-denied", {"route": route_id, "train": train,
                                                   "conflict": route_id})
            return False, route_id
        for other_id in sorted(self.layout.routes):
            if other_id == route_id:
                continue
            if self.phases[other_id] in ACTIVE_PHASES and self.layout.conflicting(route_id, other_id):
                self.port.emit_marker("route-denied", {"route": route_id, "train": train,
                                                       "conflict": other_id})
                return False, other_id
        for seg in route.segments:
            if self.believed_occupied[seg]:
                self.port.emit_marker("route-denied", {"route": route_id, "train": train,
                                                       "conflict": f"segment:{seg}"})
                return False, f"segment:{seg}"

        self.phases[route_id] = RoutePhase.LOCKING
        self.route_train[route_id] = train
        self.entered[route_id] = False
        self._route_cmds[route_id] = []
        self.port.emit_marker("route-granted", {"route": route_id, "train": train})
        for point in sorted(route.points):
            self._issue(point, route.points[point], route_id)
        self._check_locked(route_id)
        return True, None

    def _issue(self, element: str, desired: str, route_id: Optional[str]) -> CmdRecord:
        cmd_id = f"c{self._cmd_counter}"
        self._cmd_counter += 1
        oc = self.oc_by_element[element]
        rec = CmdRecord(cmd_id, oc, element, desired, route_id, attempts=1,
                        issued_at=self.port.clock())
        self.cmds[cmd_id] = rec
        if route_id is not None:
            self._route_cmds[route_id].append(cmd_id)
        self.port.emit_marker("cmd-issued", {"cmd_id": cmd_id, "oc": oc, "element": element,
                                             "desired": desired, "attempt": 1})
        self.port.send_command(oc, element, desired, cmd_id)
        self.port.schedule_timer(self.retry_timeout_ms, {"cmd_id": cmd_id})
        return rec

    def _reissue(self, rec: CmdRecord) -> None:
        rec.attempts += 1
        self.port.emit_marker("cmd-issued", {"cmd_id": rec.cmd_id, "oc": rec.oc,
                                             "element": rec.element, "desired": rec.desired,
                                             "attempt": rec.attempts})
        self.port.send_command(rec.oc, rec.element, rec.desired, rec.cmd_id)
        self.port.schedule_timer(self.retry_timeout_ms, {"cmd_id": rec.cmd_id})

    def on_cmd_timeout(self, cmd_id: str) -> None:
        rec = self.cmds.get(cmd_id)
        if rec is None or rec.confirmed or rec.gave_up:
            return
        if rec.attempts <= self.max_retries:
            self._reissue(rec)
        else:
            self._give_up(rec)

    def _give_up(self, rec: CmdRecord) -> None:
        rec.gave_up = True
        self.port.emit_event("AvailabilityDegraded", "warning", {
            "cmd_id": rec.cmd_id, "element": rec.element, "attempts": rec.attempts,
        })
        if rec.route is None:
            return
        phase = self.phases[rec.route]
        if phase == RoutePhase.LOCKING:
            self._abort_route(rec.route, rec.cmd_id)
        elif phase == RoutePhase.LOCKED:
            # the proceed command may have reached the field even though its
            # confirmation never came back, so the route is only freed once a
            # protective stop is confirmed; until then it stays held
            self._protective_stop(rec.route, rec.cmd_id)

    def _protective_stop(self, route_id: str, origin_cmd: str) -> None:
        signal = self.layout.routes[route_id].entry_signal
        rec = self._issue(signal, "stop", None)
        self._protective_stops[rec.cmd_id] = route_id
        self.port.emit_marker("route-protective-stop", {"route": route_id,
                                                        "cmd_id": rec.cmd_id,
                                                        "after": origin_cmd})

    def _abort_route(self, route_id: str, cmd_id: str) -> None:
        train = self.route_train[route_id]
        self.phases[route_id] = RoutePhase.FREE
        self.route_train[route_id] = None
        self.entered[route_id] = False
        self._route_cmds[route_id] = []
        self.port.emit_marker("route-aborted", {"route": route_id, "train": train,
                                                "cmd_id": cmd_id})

    # -- statuses ------------------------------------------------------------

    def on_oc_status(self, status: OcStatus) -> None:
        if status.cmd_id is not None:
            rec = self.cmds.get(status.cmd_id)
            if rec is None or rec.element != status.element:
                self.port.emit_event("UnsolicitedStatus", "warning", {
                    "element": status.element, "cmd_id": status.cmd_id,
                })
                return
            if rec.confirmed:
                return
            if status.state == rec.desired:
                rec.confirmed = True
                if rec.cmd_id in self._protective_stops:
                    route_id = self._protective_stops.pop(rec.cmd_id)
                    if self.phases[route_id] == RoutePhase.LOCKED:
                        segments = self.layout.routes[route_id].segments
                        if any(self.believed_occupied[s] for s in segments):
                            # a train already reached the route; keep it held
                            # and let normal passage release it
                            self.phases[route_id] = RoutePhase.OCCUPIED
                            self.entered[route_id] = True
                            self.port.emit_marker("route-entered", {
                                "route": route_id,
                                "train": self.route_train[route_id],
                            })
                        else:
                            self._abort_route(route_id, rec.cmd_id)
                elif rec.cmd_id in self._signal_cmds:
                    route_id = self._signal_cmds[rec.cmd_id]
                    if status.state == "proceed" and self.phases[route_id] == RoutePhase.LOCKED:
                        self.port.emit_marker("route-ready", {"route": route_id})
                elif rec.route is not None:
                    self._check_locked(rec.route)
            else:
                if rec.attempts <= self.max_retries:
                    self._reissue(rec)
                else:
                    self._give_up(rec)
            return

        if status.segment is None:
            self.port.emit_event("UnsolicitedStatus", "warning", {"element": status.element})
            return
        if status.segment not in self.believed_occupied:
            self.port.emit_event("UnsolicitedStatus", "warning", {
                "element": status.element, "segment": status.segment,
            })
            return
        occupied = status.state == "occupied"
        self.believed_occupied[status.segment] = occupied
        if occupied:
            self._on_segment_occupied(status.segment)
        else:
            self._on_segment_cleared()

    def _on_segment_occupied(self, segment: str) -> None:
        for route_id in sorted(self.layout.routes):
            route = self.layout.routes[route_id]
            if self.phases[route_id] == RoutePhase.LOCKED and route.segments[0] == segment:
                self.phases[route_id] = RoutePhase.OCCUPIED
                self.entered[route_id] = True
                self.port.emit_marker("route-entered", {"route": route_id,
                                                        "train": self.route_train[route_id]})
                self._issue(route.entry_signal, "stop", None)

    def _on_segment_cleared(self) -> None:
        for route_id in sorted(self.layout.routes):
            if self.phases[route_id] == RoutePhase.OCCUPIED and self.entered[route_id]:
                if not any(self.believed_occupied[s] for s in self.layout.routes[route_id].segments):
                    self.release_route(route_id)

    def _check_locked(self, route_id: str) -> None:
        if self.phases[route_id] != RoutePhase.LOCKING:
            return
        route = self.layout.routes[route_id]
        point_cmds = [self.cmds[c] for c in self._route_cmds[route_id]]
        if not all(rec.confirmed for rec in point_cmds):
            return
        if any(self.believed_occupied[s] for s in route.segments):
            return
        self.phases[route_id] = RoutePhase.LOCKED
        self.port.emit_marker("route-locked", {"route": route_id})
        rec = self._issue(route.entry_signal, "proceed", route_id)
        self._signal_cmds[rec.cmd_id] = route_id

    # -- release ----------------------------------------------------------------

    def release_route(self, route_id: str) -> bool:
        """Free the route after complete passage; rejected otherwise."""
        if route_id not in self.layout.routes:
            raise UnknownRouteError(route_id)
        if self.phases[route_id] != RoutePhase.OCCUPIED or not self.entered[route_id]:
            return False
        if any(self.believed_occupied[s] for s in self.layout.routes[route_id].segments):
            return False
        self.phases[route_id] = RoutePhase.FREE
        train = self.route_train[route_id]
        self.route_train[route_id] = None
        self.entered[route_id] = False
        self._route_cmds[route_id] = []
        self.port.emit_marker("route-released", {"route": route_id, "train": train})
        return True

    def pending_commands(self) -> dict[str, dict]:
        return {
            cmd_id: {"element": rec.element, "desired": rec.desired, "attempts": rec.attempts}
            for cmd_id, rec in self.cmds.items() if not rec.confirmed and not rec.gave_up
        }


@dataclass
class OcPort:
    send_status: Callable[[object], None]  # OcStatus
    schedule_settle: Callable[[int, dict], None]
    on_element_settled: Callable[[str, str], None]  # element, new state
    clock: Callable[[], int]


class ObjectController:
    """Drives one field element; physical state lives here."""

    def __init__(self, oc_id: str, element: str, element_kind: str, port: OcPort,
                 point_move_ms: int = 2000, signal_ms: int = 200):
        self.oc_id = oc_id
        self.element = element
        self.element_kind = element_kind  # "point" | "signal" | "train-detection"
        self.port = port
        self.point_move_ms = point_move_ms
        self.signal_ms = signal_ms
        self.position = "left" if element_kind == "point" else None
        self.moving = False
        self.aspect = "stop" if element_kind == "signal" else None

    def handle_command(self, cmd: OcCommand) -> None:
        if cmd.element != self.element:
            return
        if self.element_kind == "point":
            if cmd.desired == self.position and not self.moving:
                self.port.send_status(OcStatus(self.element, self.position, cmd.cmd_id))
                return
            self.moving = True
            self.port.schedule_settle(self.point_move_ms,
                                      {"cmd_id": cmd.cmd_id, "desired": cmd.desired})
        elif self.element_kind == "signal":
            if cmd.desired == self.aspect:
                self.port.send_status(OcStatus(self.element, self.aspect, cmd.cmd_id))
                return
            self.port.schedule_settle(self.signal_ms,
                                      {"cmd_id": cmd.cmd_id, "desired": cmd.desired})

    def handle_settle(self, payload: dict) -> None:
        desired = payload["desired"]
        if self.element_kind == "point":
            self.position = desired
            self.moving = False
        elif self.element_kind == "signal":
            self.aspect = desired
        self.port.send_status(OcStatus(self.element, desired, payload["cmd_id"]))
        self.port.on_element_settled(self.element, desired)

    def report_occupancy(self, segment: str, occupied: bool) -> None:
        state = "occupied" if occupied else "clear"
        self.port.send_status(OcStatus(self.element, state, None, segment))

    def physical_state(self) -> str:
        if self.element_kind == "point":
            return "moving" if self.moving else self.position
        if self.element_kind == "signal":
            return self.aspect
        return "n/a"
