from __future__ import annotations

import random

import pytest

from railsecsim.interlocking import (IlsPort, Interlocking, LayoutError, ObjectController,
                                     OcPort, OcStatus, RoutePhase, RouteState,
                                     UnknownRouteError, is_unsafe, parse_layout)

from oracles import routes_conflict, unsafe_verdict


@pytest.fixture()
def layout(demo_topology_doc):
    return parse_layout(demo_topology_doc["layout"])


class PortRecorder:
    def __init__(self):
        self.commands = []
        self.markers = []
        self.events = []
        self.timers = []
        self.now = 0

    def ils_port(self):
        return IlsPort(
            send_command=lambda oc, el, desired, cmd_id: self.commands.append(
                (oc, el, desired, cmd_id)),
            emit_marker=lambda kind, payload: self.markers.append((kind, payload)),
            emit_event=lambda cat, sev, details: self.events.append((cat, sev, details)),
            schedule_timer=lambda delay, payload: self.timers.append((delay, payload)),
            clock=lambda: self.now,
        )


OC_BY_ELEMENT = {"P1": "oc-p1", "P2": "oc-p2", "SigA": "oc-siga", "SigB": "oc-sigb",
                 "SigC": "oc-sigc", "TD1": "oc-td1", "TD2": "oc-td2", "TD3": "oc-td3",
                 "TD4": "oc-td4", "TD5": "oc-td5", "TD6": "oc-td6"}


def make_ils(layout):
    port = PortRecorder()
    ils = Interlocking(layout, OC_BY_ELEMENT, port.ils_port())
    return ils, port


def confirm_all(ils, port):
    """Echo every outstanding command as a successful status."""
    while True:
        pending = [(cmd_id, rec) for cmd_id, rec in ils.cmds.items()
                   if not rec.confirmed and not rec.gave_up]
        if not pending:
            return
        for cmd_id, rec in pending:
            ils.on_oc_status(OcStatus(rec.element, rec.desired, cmd_id))


def run_passage(ils, port, route_id):
    """Simulate honest occupancy reporting for a complete passage."""
    segs = ils.layout.routes[route_id].segments
    ils.on_oc_status(OcStatus(f"TD{segs[0][1]}", "occupied", None, segs[0]))
    for prev, cur in zip(segs, segs[1:]):
        ils.on_oc_status(OcStatus(f"TD{cur[1]}", "occupied", None, cur))
        ils.on_oc_status(OcStatus(f"TD{prev[1]}", "clear", None, prev))
    ils.on_oc_status(OcStatus(f"TD{segs[-1][1]}", "clear", None, segs[-1]))


def test_single_route_on_empty_layout_granted(layout):
    ils, port = make_ils(layout)
    granted, conflict = ils.request_route("R1", "T1")
    assert granted and conflict is None
    assert ils.phases["R1"] == RoutePhase.LOCKING
    # point commands issued for both required points
    assert {c[1] for c in port.commands} == {"P1", "P2"}


def test_unknown_route_raises(layout):
    ils, _ = make_ils(layout)
    with pytest.raises(UnknownRouteError):
        ils.request_route("R9", None)


def test_conflicting_request_denied(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    confirm_all(ils, port)
    assert ils.phases["R1"] == RoutePhase.LOCKED
    granted, conflict = ils.request_route("R2", "T2")
    assert not granted and conflict == "R1"


def test_grant_deny_matrix_matches_bruteforce_oracle(layout, demo_topology_doc):
    routes_doc = {r["id"]: r for r in demo_topology_doc["layout"]["routes"]}
    ids = sorted(routes_doc)
    for first in ids:
        for second in ids:
            if first == second:
                continue
            ils, port = make_ils(layout)
            granted_first, _ = ils.request_route(first, "TA")
            assert granted_first
            confirm_all(ils, port)
            granted_second, _ = ils.request_route(second, "TB")
            expected = not routes_conflict(routes_doc[first], routes_doc[second])
            assert granted_second == expected, (first, second)


def test_lock_requires_all_point_confirmations(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    (cmd_a, rec_a), (cmd_b, rec_b) = [(c, ils.cmds[c]) for c in list(ils.cmds)]
    ils.on_oc_status(OcStatus(rec_a.element, rec_a.desired, cmd_a))
    assert ils.phases["R1"] == RoutePhase.LOCKING
    ils.on_oc_status(OcStatus(rec_b.element, rec_b.desired, cmd_b))
    assert ils.phases["R1"] == RoutePhase.LOCKED
    # entry signal commanded to proceed only now
    assert ("oc-siga", "SigA", "proceed", "c2") in port.commands


def test_wrong_position_confirmation_triggers_retry(layout):
    ils, port = make_ils(layout)
    ils.request_route("R3", "T1")  # needs P1 right
    cmd_id, rec = next(iter(ils.cmds.items()))
    before = len(port.commands)
    ils.on_oc_status(OcStatus("P1", "left", cmd_id))  # wrong position
    assert ils.phases["R3"] == RoutePhase.LOCKING
    assert len(port.commands) == before + 1  # re-issued
    assert rec.attempts == 2


def test_unknown_cmd_id_is_unsolicited(layout):
    ils, port = make_ils(layout)
    ils.on_oc_status(OcStatus("P1", "left", "c999"))
    assert any(cat == "UnsolicitedStatus" for cat, _, _ in port.events)


def test_full_cycle_release(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    confirm_all(ils, port)
    run_passage(ils, port, "R1")
    assert ils.phases["R1"] == RoutePhase.FREE
    assert ("route-released", {"route": "R1", "train": "T1"}) in port.markers
    # signal returned to stop when the train entered
    assert ("oc-siga", "SigA", "stop", "c3") in port.commands


def test_release_before_passage_completes_rejected(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    confirm_all(ils, port)
    ils.on_oc_status(OcStatus("TD1", "occupied", None, "S1"))
    assert ils.phases["R1"] == RoutePhase.OCCUPIED
    assert ils.release_route("R1") is False
    assert ils.phases["R1"] == RoutePhase.OCCUPIED


def test_two_sequential_trains_two_full_cycles(layout):
    ils, port = make_ils(layout)
    for train in ("T1", "T2"):
        granted, _ = ils.request_route("R1", train)
        assert granted
        confirm_all(ils, port)
        run_passage(ils, port, "R1")
        assert ils.phases["R1"] == RoutePhase.FREE
    released = [m for m in port.markers if m[0] == "route-released"]
    assert [m[1]["train"] for m in released] == ["T1", "T2"]


def test_retries_exhausted_aborts_route_with_availability_event(layout):
    ils, port = make_ils(layout)
    ils.request_route("R3", "T1")
    cmd_id = next(iter(ils.cmds))
    for _ in range(4):
        ils.on_cmd_timeout(cmd_id)
    assert any(cat == "AvailabilityDegraded" for cat, _, _ in port.events)
    assert ils.phases["R3"] == RoutePhase.FREE
    assert any(kind == "route-aborted" for kind, _ in port.markers)


def test_regrant_of_active_route_denied(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    granted, conflict = ils.request_route("R1", "T2")
    assert not granted and conflict == "R1"


# -- the unsafe-state predicate ------------------------------------------------


def empty_state(layout):
    return RouteState(
        phases={r: RoutePhase.FREE for r in layout.routes},
        believed_occupied={s: False for s in layout.segments},
        pending_commands={},
        signal_aspects={s: "stop" for s in layout.signals},
        point_positions={p: "left" for p in layout.points},
        occupancy={s: None for s in layout.segments},
        route_train={r: None for r in layout.routes},
    )


def test_empty_system_is_safe(layout):
    assert is_unsafe(empty_state(layout), layout) == (False, None)


def test_two_locked_overlapping_routes_unsafe(layout):
    state = empty_state(layout)
    state.phases["R1"] = RoutePhase.LOCKED
    state.phases["R2"] = RoutePhase.LOCKED
    unsafe, witness = is_unsafe(state, layout)
    assert unsafe
    assert witness["clause"] == "a"
    assert witness["segment"] == "S4"


def test_proceed_without_held_route_unsafe(layout):
    state = empty_state(layout)
    state.signal_aspects["SigB"] = "proceed"
    unsafe, witness = is_unsafe(state, layout)
    assert unsafe and witness["clause"] == "b" and witness["signal"] == "SigB"


def test_proceed_with_foreign_occupancy_unsafe(layout):
    state = empty_state(layout)
    state.phases["R3"] = RoutePhase.LOCKED
    state.route_train["R3"] = "T2"
    state.signal_aspects["SigA"] = "proceed"
    state.occupancy["S2"] = "T1"
    unsafe, witness = is_unsafe(state, layout)
    assert unsafe and witness["clause"] == "b" and witness["train"] == "T1"


def test_own_train_occupancy_is_safe(layout):
    state = empty_state(layout)
    state.phases["R1"] = RoutePhase.OCCUPIED
    state.route_train["R1"] = "T1"
    state.signal_aspects["SigA"] = "proceed"
    state.occupancy["S1"] = "T1"
    assert is_unsafe(state, layout)[0] is False


def test_point_moving_under_held_route_unsafe(layout):
    state = empty_state(layout)
    state.phases["R1"] = RoutePhase.LOCKED
    state.point_positions["P2"] = "moving"
    unsafe, witness = is_unsafe(state, layout)
    assert unsafe and witness["clause"] == "c" and witness["point"] == "P2"


def random_state(layout, rng):
    phases = list(RoutePhase)
    return RouteState(
        phases={r: rng.choice(phases) for r in layout.routes},
        believed_occupied={s: rng.random() < 0.3 for s in layout.segments},
        pending_commands={},
        signal_aspects={s: rng.choice(["stop", "proceed"]) for s in layout.signals},
        point_positions={p: rng.choice(["left", "right", "moving"]) for p in layout.points},
        occupancy={s: rng.choice([None, None, "T1", "T2"]) for s in layout.segments},
        route_train={r: rng.choice([None, "T1", "T2"]) for r in layout.routes},
    )


def test_randomized_states_match_bruteforce_oracle(layout, demo_topology_doc):
    routes = {r["id"]: r["segments"] for r in demo_topology_doc["layout"]["routes"]}
    points_of_route = {r["id"]: list(r.get("points", {}))
                       for r in demo_topology_doc["layout"]["routes"]}
    entry = {r["id"]: r["entry_signal"] for r in demo_topology_doc["layout"]["routes"]}
    rng = random.Random(1234)
    for _ in range(1000):
        state = random_state(layout, rng)
        expected = unsafe_verdict(
            {"phases": {r: p.value for r, p in state.phases.items()},
             "signal_aspects": state.signal_aspects,
             "point_positions": state.point_positions,
             "occupancy": state.occupancy,
             "route_train": state.route_train},
            routes, points_of_route, entry,
            [s["id"] for s in demo_topology_doc["layout"]["signals"]])
        assert is_unsafe(state, layout)[0] == expected


# -- layout parsing -----------------------------------------------------------


def test_layout_requires_adjacent_route_segments(demo_topology_doc):
    doc = dict(demo_topology_doc["layout"])
    doc = {**doc, "routes": [{"id": "RX", "entry_signal": "SigA",
                              "segments": ["S1", "S3"], "points": {}}]}
    with pytest.raises(LayoutError):
        parse_layout(doc)


def test_layout_entry_signal_must_guard_first_segment(demo_topology_doc):
    doc = dict(demo_topology_doc["layout"])
    doc = {**doc, "routes": [{"id": "RX", "entry_signal": "SigB",
                              "segments": ["S1", "S2"], "points": {}}]}
    with pytest.raises(LayoutError):
        parse_layout(doc)


def test_object_controller_point_movement():
    log = []
    port = OcPort(
        send_status=lambda status: log.append(("status", status)),
        schedule_settle=lambda delay, payload: log.append(("settle", delay, payload)),
        on_element_settled=lambda el, state: log.append(("settled", el, state)),
        clock=lambda: 0,
    )
    oc = ObjectController("oc-p1", "P1", "point", port, point_move_ms=2000)
    from railsecsim.interlocking import OcCommand
    oc.handle_command(OcCommand("c1", "P1", "left"))  # already there
    assert log[0][0] == "status" and log[0][1].state == "left"
    oc.handle_command(OcCommand("c2", "P1", "right"))
    assert oc.physical_state() == "moving"
    assert log[1] == ("settle", 2000, {"cmd_id": "c2", "desired": "right"})
    oc.handle_settle({"cmd_id": "c2", "desired": "right"})
    assert oc.physical_state() == "right"


def confirm_points_only(ils):
    for cmd_id, rec in list(ils.cmds.items()):
        if rec.element in ("P1", "P2") and not rec.confirmed:
            ils.on_oc_status(OcStatus(rec.element, rec.desired, cmd_id))


def test_locked_route_gets_protective_stop_before_abort(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    confirm_points_only(ils)
    assert ils.phases["R1"] == RoutePhase.LOCKED
    proceed_cmd = [c for c, r in ils.cmds.items() if r.desired == "proceed"][0]
    for _ in range(4):
        ils.on_cmd_timeout(proceed_cmd)
    # the confirmation never came: the route stays held, a stop went out
    assert ils.phases["R1"] == RoutePhase.LOCKED
    stops = [(c, r) for c, r in ils.cmds.items()
             if r.desired == "stop" and not r.confirmed]
    assert len(stops) == 1
    stop_cmd, stop_rec = stops[0]
    ils.on_oc_status(OcStatus("SigA", "stop", stop_cmd))
    assert ils.phases["R1"] == RoutePhase.FREE
    assert any(kind == "route-aborted" for kind, _ in port.markers)


def test_unconfirmable_protective_stop_keeps_route_held(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    confirm_points_only(ils)
    proceed_cmd = [c for c, r in ils.cmds.items() if r.desired == "proceed"][0]
    for _ in range(4):
        ils.on_cmd_timeout(proceed_cmd)
    stop_cmd = [c for c, r in ils.cmds.items()
                if r.desired == "stop" and not r.confirmed][0]
    for _ in range(4):
        ils.on_cmd_timeout(stop_cmd)
    # nothing confirms: better a stalled-but-held route than a freed one
    # under a signal that may physically show proceed
    assert ils.phases["R1"] == RoutePhase.LOCKED


def test_protective_stop_with_believed_entry_keeps_route_occupied(layout):
    ils, port = make_ils(layout)
    ils.request_route("R1", "T1")
    confirm_points_only(ils)
    proceed_cmd = [c for c, r in ils.cmds.items() if r.desired == "proceed"][0]
    for _ in range(4):
        ils.on_cmd_timeout(proceed_cmd)
    # a late occupancy report lands while the protective stop is in flight
    ils.on_oc_status(OcStatus("TD1", "occupied", None, "S1"))
    stop_cmd = [c for c, r in ils.cmds.items()
                if r.desired == "stop" and not r.confirmed][0]
    ils.on_oc_status(OcStatus("SigA", "stop", stop_cmd))
    assert ils.phases["R1"] == RoutePhase.OCCUPIED
    # normal passage still releases it
    ils.on_oc_status(OcStatus("TD1", "clear", None, "S1"))
    assert ils.phases["R1"] == RoutePhase.FREE
