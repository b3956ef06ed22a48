"""World assembly and message-path wiring.

Traffic paths (demo architecture, Fig.-3 style):

  ILS -> ALG (plaintext, whitelist+DPI) -> TC termination box (wrap, one
  envelope per channel) -> conduit channels -> OC security box (per-channel
  rate bucket, unwrap, allow-list) -> transport receive -> Object Controller

and the mirror image for statuses. MDM traffic crosses its conduit as bare
frames and is evaluated by the ALG at the Technology Center. Security events
from every component are zero-delay events targeted at the SIEM, so the
whole defence pipeline is visible in the trace.

Conventions: the box protecting Object Controller "oc-x" is asset "box-x";
the termination point is the SecurityBox asset located in the ILS zone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import rastalite, secbox
from .alg import Alg, DropReason, UnknownZoneError, VersionConflictError
from .attacks import (AttackEngine, AttackScenario, CapabilityDeniedError,
                      UnknownTargetError, check_capability)
from .engine import Engine, Event
from .interlocking import (Interlocking, IlsPort, ObjectController, OcCommand,
                           OcPort, OcStatus, RouteState, TrackLayout, is_unsafe,
                           parse_layout)
from .scenario import Scenario, default_incident_db_doc, ruleset_from_json, ruleset_to_json
from .siem import CorrelationRule, IncidentDb, Siem
from .topology import AssetKind, Topology, load_topology


class ValidationError(Exception):
    """Scenario or topology carries error-grade violations."""


DROP_CATEGORY = {
    DropReason.QUARANTINED: "DropQuarantined",
    DropReason.NO_RULE: "DropNoRule",
    DropReason.RATE_EXCEEDED: "DropRate",
    DropReason.SIGNATURE_MATCH: "SignatureMatch",
}

PATCHABLE_COMPONENTS = ("secbox", "ils", "ruleset")


@dataclass
class PatchRecord:
    patch_id: str
    target: str
    overrides: dict
    staged: bool = False
    shadow_result: str = "pending"  # pending | pass | fail


@dataclass
class TrainState:
    id: str
    stall_on: Optional[str] = None
    status: str = "idle"  # idle | waiting | running | stalling | stalled | done
    route: Optional[str] = None
    plan: list = field(default_factory=list)


class World:
    """Ground truth: train positions and passage scripting."""

    def __init__(self, sim: "SimWorld"):
        self.sim = sim
        self.occupancy: dict[str, Optional[str]] = {s: None for s in sim.layout.segments}
        self.trains: dict[str, TrainState] = {}
        self.waiting: dict[str, str] = {}  # train -> granted route

    def register_train(self, train_id: str, stall_on: Optional[str]) -> None:
        self.trains[train_id] = TrainState(train_id, stall_on)

    def register_wait(self, train_id: str, route_id: str) -> None:
        state = self.trains.setdefault(train_id, TrainState(train_id))
        state.status = "waiting"
        state.route = route_id
        self.waiting[train_id] = route_id

    def on_signal_proceed(self, signal: str) -> None:
        for train_id in sorted(self.waiting):
            route_id = self.waiting[train_id]
            if self.sim.layout.routes[route_id].entry_signal != signal:
                continue
            del self.waiting[train_id]
            state = self.trains[train_id]
            state.status = "running"
            state.plan = self._passage_plan(route_id)
            cfg = self.sim.scenario.traffic
            self.sim.engine.schedule(
                self.sim.engine.clock + cfg["train_enter_delay_ms"],
                "world", "train-step", {"train": train_id, "step": 0})
            return

    def _passage_plan(self, route_id: str) -> list:
        cfg = self.sim.scenario.traffic
        segs = self.sim.layout.routes[route_id].segments
        plan = [("enter", segs[0], 0)]
        for i in range(1, len(segs)):
            plan.append(("enter", segs[i], cfg["train_dwell_ms"]))
            plan.append(("leave", segs[i - 1], cfg["train_clear_lag_ms"]))
        plan.append(("leave", segs[-1], cfg["train_dwell_ms"]))
        return plan

    def handle_step(self, payload: dict) -> None:
        """One passage step. A train stalling on segment X still clears the
        segment behind it (it has fully arrived on X), then stops."""
        train = self.trains[payload["train"]]
        step_idx = payload["step"]
        action, segment, _ = train.plan[step_idx]
        if action == "enter":
            self.occupancy[segment] = train.id
            self.sim.report_occupancy(segment, True)
            if train.stall_on == segment:
                train.status = "stalling"
        else:
            if self.occupancy.get(segment) == train.id:
                self.occupancy[segment] = None
            self.sim.report_occupancy(segment, False)
            if train.status == "stalling":
                train.status = "stalled"
                return
        if train.status == "stalling" and (step_idx + 1 >= len(train.plan)
                                           or train.plan[step_idx + 1][0] != "leave"):
            train.status = "stalled"
            return
        if step_idx + 1 < len(train.plan):
            delay = train.plan[step_idx + 1][2]
            self.sim.engine.schedule(self.sim.engine.clock + delay, "world", "train-step",
                                     {"train": train.id, "step": step_idx + 1})
        else:
            train.status = "done"


class SimWorld:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 revoke_on_tamper: Optional[bool] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.engine = Engine(self.seed)
        self.topology: Topology = load_topology(scenario.topology_doc)
        errors = self.topology.error_violations()
        if errors:
            raise ValidationError("; ".join(f"{v.kind}:{v.subject}" for v in errors))
        if self.topology.layout is None:
            raise ValidationError("topology has no layout")
        self.layout: TrackLayout = parse_layout(self.topology.layout)
        self.revoke_on_tamper = scenario.secbox["revoke_on_tamper"] \
            if revoke_on_tamper is None else revoke_on_tamper

        self._unsafe_flagged = False
        self.unsafe_witness: Optional[dict] = None
        self.patches: dict[str, PatchRecord] = {}
        self.shadow_runner: Optional[Callable[[dict], str]] = None
        self.finished = False

        self._find_assets()
        self._build_channels()
        self._build_keys_and_boxes()
        self._build_connections()
        self._build_alg_and_siem()
        self._build_interlocking()
        self.world = World(self)
        for train in scenario.traffic.get("trains", []):
            self.world.register_train(train["id"], train.get("stall_on"))
        self.attack_engine = AttackEngine(self, scenario.attacks)
        self._register_handlers()
        self.engine.add_monitor(self._safety_monitor)

    # -- discovery -----------------------------------------------------------

    def _find_assets(self) -> None:
        topo = self.topology
        self.ils_id = next(a.id for a in topo.assets.values() if a.kind == AssetKind.ILS)
        mdm = [a.id for a in topo.assets.values() if a.kind == AssetKind.MDM]
        self.mdm_id = mdm[0] if mdm else None
        self.ils_zone = topo.zone_of(self.ils_id)

        self.oc_by_element: dict[str, str] = {}
        self.element_kind: dict[str, str] = {}
        layout_doc = topo.layout
        for entry in layout_doc.get("points", []):
            self.oc_by_element[entry["id"]] = entry["oc"]
            self.element_kind[entry["id"]] = "point"
        for entry in layout_doc.get("signals", []):
            self.oc_by_element[entry["id"]] = entry["oc"]
            self.element_kind[entry["id"]] = "signal"
        self.detector_by_segment: dict[str, tuple[str, str]] = {}
        for entry in layout_doc.get("detectors", []):
            self.oc_by_element[entry["id"]] = entry["oc"]
            self.element_kind[entry["id"]] = "train-detection"
            self.detector_by_segment[entry["segment"]] = (entry["id"], entry["oc"])

        self.element_of_oc = {oc: el for el, oc in self.oc_by_element.items()}
        self.oc_ids = sorted(self.element_of_oc)
        if not self.oc_ids:
            raise ValidationError("layout names no object controllers")

        self.box_of_oc: dict[str, str] = {}
        for oc in self.oc_ids:
            box_id = "box-" + oc.removeprefix("oc-")
            if box_id not in topo.assets:
                raise ValidationError(f"missing security box asset {box_id} for {oc}")
            self.box_of_oc[oc] = box_id
        self.oc_of_box = {b: o for o, b in self.box_of_oc.items()}

        fea_zone = topo.zone_of(self.oc_ids[0])
        conduit = topo.conduit_between(self.ils_zone, fea_zone)
        if conduit is None:
            raise ValidationError(f"no conduit between {self.ils_zone} and {fea_zone}")
        self.fea_zone = fea_zone
        self.fea_conduit = conduit.id

        terminals = [a.id for a in topo.assets.values()
                     if a.kind == AssetKind.SECURITY_BOX and topo.zone_of(a.id) == self.ils_zone]
        if not terminals:
            raise ValidationError("no termination security box in the ILS zone")
        self.tc_term_id = terminals[0]

        self.mdm_conduit = None
        if self.mdm_id is not None:
            mdm_zone = topo.zone_of(self.mdm_id)
            c = topo.conduit_between(self.ils_zone, mdm_zone)
            self.mdm_conduit = c.id if c else None

    # -- construction ------------------------------------------------------------

    def _build_channels(self) -> None:
        self.channel_sets: dict[str, rastalite.ChannelSet] = {}
        for conduit_id in sorted(self.topology.conduits):
            conduit = self.topology.conduits[conduit_id]
            specs = self.scenario.channels.get(conduit_id)
            if specs is None:
                specs = [dict(self.scenario.channel_defaults)
                         for _ in range(conduit.channel_count)]
            channels = []
            for i, spec in enumerate(specs):
                merged = dict(self.scenario.channel_defaults)
                merged.update(spec)
                channels.append(rastalite.Channel(
                    index=i,
                    latency_ms=merged["latency_ms"],
                    jitter_ms=merged["jitter_ms"],
                    loss=merged["loss"],
                    up=merged["up"],
                    rng=self.engine.fork_rng(f"chan:{conduit_id}:{i}"),
                ))
            self.channel_sets[conduit_id] = rastalite.ChannelSet(channels)

    def _build_keys_and_boxes(self) -> None:
        cfg = self.scenario.secbox
        rng = self.engine.fork_rng("keys")
        self.keystore = secbox.KeyStore()
        self.boxes: dict[str, secbox.SecurityBox] = {}
        fea_channels = len(self.channel_sets[self.fea_conduit].channels)

        for oc in self.oc_ids:
            box_id = self.box_of_oc[oc]
            config = secbox.SecBoxConfig(
                conduit_id=self.fea_conduit,
                allow_rules=[("ils", oc, "oc-command")],
                rate_capacity=cfg["rate_capacity"],
                refill_per_s=cfg["refill_per_s"],
            )
            self.boxes[box_id] = secbox.SecurityBox(box_id, self.fea_conduit, config,
                                                    fea_channels)
            for direction in ("up", "down"):
                self.keystore.add(secbox.KeyRecord(
                    key_id=f"k-{box_id}-{direction}-1",
                    secret=rng.randbytes(32),
                    conduit_id=self.fea_conduit,
                    box_id=box_id,
                    direction=direction,
                ))

        term_config = secbox.SecBoxConfig(
            conduit_id=self.fea_conduit,
            allow_rules=[("*", "ils", "oc-status")],
            rate_capacity=cfg["rate_capacity"],
            refill_per_s=cfg["refill_per_s"],
        )
        self.boxes[self.tc_term_id] = secbox.SecurityBox(
            self.tc_term_id, self.fea_conduit, term_config, fea_channels)

        self.ingress_points = set(self.boxes) | {"mdm"} if self.mdm_id else set(self.boxes)

    def _build_connections(self) -> None:
        self.conns: dict[tuple[str, str], rastalite.Connection] = {}
        for i, oc in enumerate(self.oc_ids):
            network = 1000 + i
            self.conns[("ils", oc)] = rastalite.Connection("ils", oc, network)
            self.conns[(oc, "ils")] = rastalite.Connection(oc, "ils", network)
        if self.mdm_id is not None:
            self.conns[("ils", self.mdm_id)] = rastalite.Connection("ils", self.mdm_id, 2000)
            self.conns[(self.mdm_id, "ils")] = rastalite.Connection(self.mdm_id, "ils", 2000)

    def _build_alg_and_siem(self) -> None:
        self.alg = Alg(ruleset_from_json(self.scenario.ruleset_doc),
                       set(self.topology.zones))
        rules = [CorrelationRule(
            id=r["id"], category=r["category"], threshold=r["threshold"],
            window_ms=r["window_ms"], severity=r.get("severity", "warning"),
            source=r.get("source"),
        ) for r in self.scenario.correlation_rules]
        db_doc = self.scenario.incident_db_doc or default_incident_db_doc()
        self.siem = Siem(rules, IncidentDb.from_json(db_doc),
                         source_kind_of=self._source_kind,
                         on_alert=self._on_alert)

    def _source_kind(self, source: str) -> str:
        asset = self.topology.assets.get(source)
        if asset is not None:
            return asset.kind.value
        return "Operator" if source == "soc" else "Unknown"

    def _on_alert(self, alert) -> None:
        self.engine.schedule(self.engine.clock, "siem", "alert-raised", {
            "alert_id": alert.id, "rule_id": alert.rule_id,
            "first_time": alert.first_time, "last_time": alert.last_time,
            "event_ids": list(alert.event_ids), "severity": alert.severity,
            "incident": alert.incident,
        })

    def _build_interlocking(self) -> None:
        cfg = self.scenario.ils
        port = IlsPort(
            send_command=self._ils_send_command,
            emit_marker=lambda kind, payload: self.engine.schedule(
                self.engine.clock, "ils", kind, payload),
            emit_event=lambda cat, sev, details: self.emit_security_event(
                "ils", cat, sev, details),
            schedule_timer=lambda delay, payload: self.engine.schedule(
                self.engine.clock + delay, "ils", "cmd-timeout", payload),
            clock=lambda: self.engine.clock,
        )
        self.ils = Interlocking(self.layout, self.oc_by_element, port,
                                retry_timeout_ms=cfg["retry_timeout_ms"],
                                max_retries=cfg["max_retries"])
        self.ocs: dict[str, ObjectController] = {}
        for oc in self.oc_ids:
            element = self.element_of_oc[oc]
            oc_port = OcPort(
                send_status=lambda status, _oc=oc: self._oc_send_status(_oc, status),
                schedule_settle=lambda delay, payload, _oc=oc: self.engine.schedule(
                    self.engine.clock + delay, _oc, "element-settled", payload),
                on_element_settled=self._on_element_settled,
                clock=lambda: self.engine.clock,
            )
            self.ocs[oc] = ObjectController(oc, element, self.element_kind[element],
                                            oc_port, point_move_ms=cfg["point_move_ms"],
                                            signal_ms=cfg["signal_ms"])

    # -- event handlers ------------------------------------------------------------

    def _register_handlers(self) -> None:
        eng = self.engine
        eng.register("config", lambda e, ev: None)
        eng.register("alg", self._handle_alg)
        eng.register("ils", self._handle_ils)
        eng.register("world", self._handle_world)
        eng.register("siem", self._handle_siem)
        eng.register("monitor", self._handle_monitor)
        eng.register("soc", self._handle_soc)
        eng.register("attack", lambda e, ev: self.attack_engine.handle(ev))
        for box_id in self.boxes:
            eng.register(box_id, self._handle_box)
        for oc in self.oc_ids:
            eng.register(oc, self._handle_oc)
        if self.mdm_id is not None:
            eng.register(self.mdm_id, self._handle_mdm)

    # -- security events -------------------------------------------------------------

    def emit_security_event(self, source: str, category: str, severity: str,
                            details: dict) -> None:
        self.engine.schedule(self.engine.clock, "siem", "security-event", {
            "source": source, "category": category, "severity": severity,
            "details": details,
        })

    def _handle_siem(self, engine: Engine, event: Event) -> None:
        if event.kind != "security-event":
            return
        p = event.payload
        self.siem.ingest(event.time, p["source"], p["category"], p["severity"],
                         p.get("details", {}))

    # -- safety monitor ---------------------------------------------------------------

    def safety_state(self) -> RouteState:
        aspects = {}
        positions = {}
        for element, oc_id in self.oc_by_element.items():
            oc = self.ocs[oc_id]
            if oc.element_kind == "signal":
                aspects[element] = oc.aspect
            elif oc.element_kind == "point":
                positions[element] = oc.physical_state()
        return RouteState(
            phases=self.ils.phases,
            believed_occupied=self.ils.believed_occupied,
            pending_commands={},
            signal_aspects=aspects,
            point_positions=positions,
            occupancy=self.world.occupancy,
            route_train=self.ils.route_train,
        )

    def _safety_monitor(self, engine: Engine, event: Event) -> None:
        if self._unsafe_flagged:
            return
        unsafe, witness = is_unsafe(self.safety_state(), self.layout)
        if unsafe:
            self._unsafe_flagged = True
            self.unsafe_witness = witness
            engine.schedule(engine.clock, "monitor", "unsafe-detected", {"witness": witness})

    def _handle_monitor(self, engine: Engine, event: Event) -> None:
        if event.kind == "unsafe-detected":
            engine.halt()

    # -- transport plumbing --------------------------------------------------------------

    def submit_to_alg(self, frame: rastalite.Frame, sender: str, receiver: str,
                      on_forward_mark: Optional[str] = None) -> None:
        src_zone = self.topology.zone_of(sender)
        dst_zone = self.topology.zone_of(receiver)
        if src_zone is None or dst_zone is None:
            self.emit_security_event("alg", "Misconfig", "warning", {
                "reason": "UnresolvableZone", "sender": sender, "receiver": receiver,
            })
            return
        self.engine.schedule(self.engine.clock + self.scenario.alg_delay_ms, "alg",
                             "alg-eval", {
                                 "wire": frame.serialize().hex(),
                                 "src_zone": src_zone, "dst_zone": dst_zone,
                                 "kind": frame.kind,
                                 "mark": on_forward_mark,
                             })

    def _handle_alg(self, engine: Engine, event: Event) -> None:
        if event.kind != "alg-eval":
            return
        p = event.payload
        wire = bytes.fromhex(p["wire"])
        try:
            frame = rastalite.deserialize(wire)
            code_ok = rastalite.compute_safety_code(frame) == frame.safety_code
        except rastalite.WireFormatError:
            frame = None
            code_ok = False
        version = self.alg.ruleset.version
        if not code_ok:
            engine.schedule(engine.clock, "alg", "alg-verdict", {
                "forward": False, "reason": "IntegrityFail", "version": version,
                "src_zone": p["src_zone"], "dst_zone": p["dst_zone"],
            })
            self.emit_security_event("alg", "IntegrityFail", "warning", {
                "src_zone": p["src_zone"], "dst_zone": p["dst_zone"],
            })
            return

        verdict = self.alg.evaluate(p["src_zone"], p["dst_zone"], frame.sender,
                                    frame.receiver, frame.kind, frame.payload,
                                    engine.clock)
        engine.schedule(engine.clock, "alg", "alg-verdict", {
            "forward": verdict.forward,
            "reason": verdict.reason.value if verdict.reason else None,
            "version": verdict.version,
            "rule": verdict.rule_id,
            "signature": verdict.signature_id,
            "frame": frame.summary(),
        })
        if not verdict.forward:
            category = DROP_CATEGORY[verdict.reason]
            severity = "critical" if verdict.reason == DropReason.SIGNATURE_MATCH else "warning"
            self.emit_security_event("alg", category, severity, {
                "reason": verdict.reason.value, "frame": frame.summary(),
                "version": verdict.version,
            })
            if verdict.quarantine_zone is not None:
                changed = self.alg.quarantine(verdict.quarantine_zone, engine.clock)
                self.emit_security_event("alg", "Quarantine", "warning", {
                    "zone": verdict.quarantine_zone, "by": "signature",
                    "already": not changed,
                })
            return

        if p.get("mark"):
            engine.schedule(engine.clock, "attack", p["mark"], {"frame": frame.summary()})
        self._forward(frame)

    def _forward(self, frame: rastalite.Frame) -> None:
        receiver = frame.receiver
        if receiver == self.ils_id:
            self._deliver_to_ils(frame)
        elif receiver == self.mdm_id and self.mdm_conduit is not None:
            self._fanout_plain(frame, self.mdm_conduit, self.mdm_id)
        elif receiver in self.element_of_oc:
            self._wrap_and_fanout(frame, receiver)
        else:
            self.emit_security_event("alg", "Misconfig", "warning", {
                "reason": "UnknownReceiver", "receiver": receiver,
            })

    def _fanout_plain(self, frame: rastalite.Frame, conduit_id: str, target: str) -> None:
        channels = self.channel_sets[conduit_id]
        for channel in channels.up_channels():
            wire = self.attack_engine.observe(self.engine.clock, conduit_id,
                                              channel.index, frame.serialize())
            at = channel.plan_delivery(self.engine.clock, target)
            if at is not None:
                self.engine.schedule(at, target, "chan-deliver", {
                    "channel": channel.index, "wire": wire.hex(), "origin": "genuine",
                })

    def _wrap_and_fanout(self, frame: rastalite.Frame, oc: str) -> None:
        box_id = self.box_of_oc[oc]
        key = self.keystore.active_for(self.fea_conduit, box_id, "down")
        if key is None:
            self.engine.schedule(self.engine.clock, self.tc_term_id, "wrap-blocked", {
                "oc": oc, "direction": "down",
            })
            return
        channels = self.channel_sets[self.fea_conduit]
        for channel in channels.up_channels():
            env = secbox.wrap(frame.serialize(), key, frame.sender, frame.receiver)
            wire = self.attack_engine.observe(self.engine.clock, self.fea_conduit,
                                              channel.index, secbox.encode_envelope(env))
            at = channel.plan_delivery(self.engine.clock, box_id)
            if at is not None:
                self.engine.schedule(at, box_id, "chan-deliver", {
                    "channel": channel.index, "wire": wire.hex(), "origin": "genuine",
                })

    def _oc_send_status(self, oc: str, status: OcStatus) -> None:
        conn = self.conns[(oc, "ils")]
        frame = conn.build_frame("oc-status", status.to_payload(), self.engine.clock)
        box_id = self.box_of_oc[oc]
        key = self.keystore.active_for(self.fea_conduit, box_id, "up")
        if key is None:
            self.engine.schedule(self.engine.clock, box_id, "wrap-blocked", {
                "oc": oc, "direction": "up",
            })
            return
        channels = self.channel_sets[self.fea_conduit]
        for channel in channels.up_channels():
            env = secbox.wrap(frame.serialize(), key, oc, "ils")
            wire = self.attack_engine.observe(self.engine.clock, self.fea_conduit,
                                              channel.index, secbox.encode_envelope(env))
            at = channel.plan_delivery(self.engine.clock, self.tc_term_id)
            if at is not None:
                self.engine.schedule(at, self.tc_term_id, "chan-deliver", {
                    "channel": channel.index, "wire": wire.hex(), "origin": "genuine",
                })

    def deliver_wire(self, target: str, channel: int, wire: bytes, origin: str) -> None:
        """Inject raw bytes at an ingress point (attack path)."""
        self.engine.schedule(self.engine.clock, target, "chan-deliver", {
            "channel": channel, "wire": wire.hex(), "origin": origin,
        })

    def _handle_box(self, engine: Engine, event: Event) -> None:
        if event.kind != "chan-deliver":
            return
        box = self.boxes[event.target]
        p = event.payload
        if not box.ingress_rate_ok(p["channel"], engine.clock):
            self.emit_security_event(box.box_id, "DropRate", "warning", {
                "channel": p["channel"], "origin": p["origin"],
            })
            return
        wire = bytes.fromhex(p["wire"])
        scope = str(p["channel"])
        result = secbox.unwrap(wire, self.keystore, box.recv_counters, scope=scope)
        if result.status != secbox.UnwrapStatus.OK:
            self.emit_security_event(box.box_id, "AuthFail", "warning", {
                "reason": result.reason, "origin": p["origin"], "key_id": result.key_id,
            })
            return
        try:
            frame = rastalite.deserialize(result.frame_bytes)
        except rastalite.WireFormatError:
            self.emit_security_event(box.box_id, "IntegrityFail", "warning", {
                "origin": p["origin"],
            })
            return
        if not box.allow_check(frame.sender, frame.receiver, frame.kind):
            self.emit_security_event(box.box_id, "DropNoRule", "warning", {
                "frame": frame.summary(), "origin": p["origin"],
            })
            return

        if box.box_id == self.tc_term_id:
            self.submit_to_alg(frame, frame.sender, frame.receiver)
            return

        oc_id = self.oc_of_box[box.box_id]
        conn = self.conns[(oc_id, "ils")]
        outcome = rastalite.receive(conn, frame)
        if outcome.status == rastalite.ReceiveStatus.ACCEPT:
            cmd = OcCommand.from_payload(frame.payload)
            engine.schedule(engine.clock, oc_id, "cmd-accepted", {"cmd_id": cmd.cmd_id})
            self.ocs[oc_id].handle_command(cmd)
        elif outcome.status == rastalite.ReceiveStatus.INTEGRITY_FAIL:
            self.emit_security_event(box.box_id, "IntegrityFail", "warning", {
                "origin": p["origin"],
            })
        elif outcome.status == rastalite.ReceiveStatus.WRONG_NETWORK:
            self.emit_security_event(box.box_id, "WrongNetwork", "warning", {
                "origin": p["origin"], "network_id": frame.network_id,
            })

    def _deliver_to_ils(self, frame: rastalite.Frame) -> None:
        conn = self.conns.get(("ils", frame.sender))
        if conn is None:
            self.emit_security_event("ils", "UnsolicitedStatus", "warning", {
                "sender": frame.sender, "reason": "unknown-peer",
            })
            return
        outcome = rastalite.receive(conn, frame)
        if outcome.status == rastalite.ReceiveStatus.ACCEPT:
            if frame.kind == "oc-status":
                self.ils.on_oc_status(OcStatus.from_payload(frame.payload))
        elif outcome.status == rastalite.ReceiveStatus.INTEGRITY_FAIL:
            self.emit_security_event("ils", "IntegrityFail", "warning", {
                "sender": frame.sender,
            })
        elif outcome.status == rastalite.ReceiveStatus.WRONG_NETWORK:
            self.emit_security_event("ils", "WrongNetwork", "warning", {
                "sender": frame.sender, "network_id": frame.network_id,
            })

    def _handle_mdm(self, engine: Engine, event: Event) -> None:
        if event.kind == "ping":
            payload = json.dumps({"status": "ok", "n": event.payload["n"]},
                                 sort_keys=True).encode()
            conn = self.conns[(self.mdm_id, "ils")]
            frame = conn.build_frame("mdm-status", payload, engine.clock)
            src_zone = self.topology.zone_of(self.mdm_id)
            dst_zone = self.ils_zone
            channels = self.channel_sets[self.mdm_conduit]
            for channel in channels.up_channels():
                wire = self.attack_engine.observe(engine.clock, self.mdm_conduit,
                                                  channel.index, frame.serialize())
                at = channel.plan_delivery(engine.clock, "alg")
                if at is not None:
                    engine.schedule(at, "alg", "alg-eval", {
                        "wire": wire.hex(), "src_zone": src_zone, "dst_zone": dst_zone,
                        "kind": frame.kind, "mark": None,
                    })
        elif event.kind == "chan-deliver":
            conn = self.conns[(self.mdm_id, "ils")]
            rastalite.receive_wire(conn, bytes.fromhex(event.payload["wire"]))

    # -- interlocking glue ---------------------------------------------------------------

    def _ils_send_command(self, oc: str, element: str, desired: str, cmd_id: str) -> None:
        conn = self.conns[("ils", oc)]
        frame = conn.build_frame("oc-command",
                                 OcCommand(cmd_id, element, desired).to_payload(),
                                 self.engine.clock)
        self.submit_to_alg(frame, "ils", oc)

    def _handle_ils(self, engine: Engine, event: Event) -> None:
        if event.kind == "route-request":
            route = event.payload["route"]
            train = event.payload.get("train")
            granted, _ = self.ils.request_route(route, train)
            if granted and train is not None:
                self.world.register_wait(train, route)
        elif event.kind == "cmd-timeout":
            self.ils.on_cmd_timeout(event.payload["cmd_id"])
        elif event.kind == "route-aborted":
            train = event.payload.get("train")
            if train is not None and self.world.waiting.get(train) == event.payload["route"]:
                del self.world.waiting[train]
                self.world.trains[train].status = "idle"

    def _handle_oc(self, engine: Engine, event: Event) -> None:
        if event.kind == "element-settled":
            self.ocs[event.target].handle_settle(event.payload)

    def _handle_world(self, engine: Engine, event: Event) -> None:
        if event.kind == "train-step":
            self.world.handle_step(event.payload)

    def _on_element_settled(self, element: str, state: str) -> None:
        if self.element_kind.get(element) == "signal" and state == "proceed":
            self.world.on_signal_proceed(element)

    def report_occupancy(self, segment: str, occupied: bool) -> None:
        detector = self.detector_by_segment.get(segment)
        if detector is None:
            return
        element, oc_id = detector
        self.ocs[oc_id].report_occupancy(segment, occupied)

    # -- operator actions -------------------------------------------------------------------

    def _handle_soc(self, engine: Engine, event: Event) -> None:
        if event.kind != "operator-action":
            return
        p = event.payload
        action = engine.action_registry.pop((p["apply_at"], p["order"]), None)
        result = self.apply_operator_action(p["action_kind"], p.get("params", {}))
        engine.schedule(engine.clock, "soc", "action-result", {
            "action_kind": p["action_kind"],
            "status": result["status"],
            "reason": result.get("reason"),
            "applied_at": engine.clock,
        })
        if action is not None:
            result = dict(result)
            result["applied_at"] = engine.clock
            action.result = result
            action.done.set()

    def apply_operator_action(self, kind: str, params: dict) -> dict:
        now = self.engine.clock
        try:
            if kind == "Quarantine":
                changed = self.alg.quarantine(params["zone"], now)
                self.emit_security_event("soc", "Quarantine", "warning", {
                    "zone": params["zone"], "action": "quarantine", "already": not changed,
                })
                return {"status": "accepted"}
            if kind == "Release":
                changed = self.alg.release(params["zone"])
                self.emit_security_event(
                    "soc", "Quarantine", "info" if changed else "warning", {
                        "zone": params["zone"], "action": "release",
                        "was_quarantined": changed,
                    })
                return {"status": "accepted"}
            if kind == "ApplyRuleset":
                ruleset = ruleset_from_json(params["ruleset"])
                version = self.alg.apply_ruleset(ruleset)
                self.emit_security_event("soc", "RuleChange", "info", {"version": version})
                return {"status": "accepted", "version": version}
            if kind == "AckAlert":
                alert_id = params["alert_id"]
                if not (0 <= alert_id < len(self.siem.alerts)):
                    return {"status": "rejected", "reason": "UnknownAlert"}
                alert = self.siem.acknowledge(alert_id)
                self.emit_security_event("soc", "AlertHandling", "info", {
                    "alert_id": alert_id, "state": alert.state,
                })
                return {"status": "accepted", "state": alert.state}
            if kind == "ResolveAlert":
                alert_id = params["alert_id"]
                if not (0 <= alert_id < len(self.siem.alerts)):
                    return {"status": "rejected", "reason": "UnknownAlert"}
                from .siem import AlertNotAcknowledgedError
                try:
                    alert = self.siem.record_resolution(alert_id, params.get("actions", []))
                except AlertNotAcknowledgedError:
                    return {"status": "rejected", "reason": "AlertNotAcknowledged"}
                self.emit_security_event("soc", "AlertHandling", "info", {
                    "alert_id": alert_id, "state": alert.state,
                })
                return {"status": "accepted", "state": alert.state}
            if kind == "StagePatch":
                return self._stage_patch(params)
            if kind == "ApplyPatch":
                return self._apply_patch(params)
            if kind == "InjectDrill":
                return self._inject_drill(params)
            return {"status": "rejected", "reason": "UnknownActionKind"}
        except UnknownZoneError:
            return {"status": "rejected", "reason": "UnknownZone"}
        except VersionConflictError:
            return {"status": "rejected", "reason": "VersionConflict"}
        except (KeyError, ValueError) as exc:
            return {"status": "rejected", "reason": f"BadParams:{exc}"}

    def _stage_patch(self, params: dict) -> dict:
        target = params["target"]
        if target not in PATCHABLE_COMPONENTS:
            return {"status": "rejected", "reason": "UnknownComponent"}
        record = PatchRecord(params["patch_id"], target, dict(params.get("overrides", {})))
        if self.shadow_runner is None:
            return {"status": "rejected", "reason": "NoShadowRunner"}
        record.shadow_result = self.shadow_runner(record.overrides)
        record.staged = True
        self.patches[record.patch_id] = record
        self.emit_security_event("soc", "Patch", "info", {
            "patch_id": record.patch_id, "staged": True,
            "shadow_result": record.shadow_result,
        })
        return {"status": "accepted", "shadow_result": record.shadow_result}

    def _apply_patch(self, params: dict) -> dict:
        record = self.patches.get(params.get("patch_id"))
        if record is None or not record.staged:
            return {"status": "rejected", "reason": "PatchNotStaged"}
        if record.shadow_result != "pass":
            return {"status": "rejected", "reason": "ShadowFailed"}
        self.apply_live_overrides(record.overrides)
        self.emit_security_event("soc", "Patch", "info", {
            "patch_id": record.patch_id, "applied": True,
        })
        return {"status": "accepted"}

    def _inject_drill(self, params: dict) -> dict:
        doc = dict(params["attack"])
        scenario = AttackScenario.from_json(doc)
        if scenario.start < self.engine.clock:
            return {"status": "rejected", "reason": "StartInPast"}
        try:
            idx = len(self.attack_engine.scenarios)
            self.attack_engine.scenarios.append(scenario)
            check_capability(scenario, self.attack_engine.scenarios)
            self.attack_engine.inject(idx, scenario)
        except CapabilityDeniedError:
            self.attack_engine.scenarios.pop()
            return {"status": "rejected", "reason": "CapabilityDenied"}
        except UnknownTargetError:
            self.attack_engine.scenarios.pop()
            return {"status": "rejected", "reason": "UnknownTarget"}
        self.emit_security_event("soc", "Drill", "warning", {"kind": scenario.kind})
        return {"status": "accepted"}

    def apply_live_overrides(self, overrides: dict) -> None:
        ruleset_changes = {k: v for k, v in overrides.items() if k.startswith("ruleset.")}
        for key in sorted(overrides):
            value = overrides[key]
            if key == "secbox.rate_capacity":
                self.scenario.secbox["rate_capacity"] = value
            elif key == "secbox.refill_per_s":
                self.scenario.secbox["refill_per_s"] = value
            elif key == "ils.retry_timeout_ms":
                self.ils.retry_timeout_ms = value
            elif key == "ils.max_retries":
                self.ils.max_retries = value
        if any(k.startswith("secbox.") for k in overrides):
            cap = self.scenario.secbox["rate_capacity"]
            refill = self.scenario.secbox["refill_per_s"]
            for box in self.boxes.values():
                box.config.rate_capacity = cap
                box.config.refill_per_s = refill
                box.buckets = {i: secbox.TokenBucket(cap, refill) for i in box.buckets}
        if ruleset_changes:
            doc = ruleset_to_json(self.alg.ruleset)
            doc["version"] = self.alg.ruleset.version + 1
            remove = set(ruleset_changes.get("ruleset.remove_rules", []))
            if remove:
                doc["whitelist"] = [r for r in doc["whitelist"] if r["id"] not in remove]
            doc["whitelist"].extend(ruleset_changes.get("ruleset.add_rules", []))
            doc["signatures"].extend(ruleset_changes.get("ruleset.add_signatures", []))
            self.alg.apply_ruleset(ruleset_from_json(doc))
            self.emit_security_event("soc", "RuleChange", "info", {
                "version": self.alg.ruleset.version, "by": "patch",
            })

    # -- startup -----------------------------------------------------------------------------

    def start(self) -> None:
        self.engine.schedule(0, "config", "run-config", {
            "seed": self.seed,
            "horizon_ms": self.scenario.horizon_ms,
            "deadline_ms": self.scenario.deadline_ms,
            "min_availability": self.scenario.min_availability,
            "revoke_on_tamper": self.revoke_on_tamper,
        })
        for request in self.scenario.traffic.get("route_requests", []):
            self.engine.schedule(request["at"], "ils", "route-request", {
                "route": request["route"], "train": request.get("train"),
            })
        every = self.scenario.traffic.get("mdm_ping_every_ms")
        if every and self.mdm_id is not None and self.mdm_conduit is not None:
            n = 0
            at = every
            while at < self.scenario.horizon_ms:
                self.engine.schedule(at, self.mdm_id, "ping", {"n": n})
                n += 1
                at += every
        self.attack_engine.inject_all()
        for action in self.scenario.scripted_actions:
            self.engine.submit_action(action["kind"], action.get("params", {}),
                                      apply_at=action["at"])

    # -- snapshots ---------------------------------------------------------------------------

    def snapshot(self) -> dict:
        zones = []
        for zone_id in sorted(self.topology.zones):
            zone = self.topology.zones[zone_id]
            zones.append({"id": zone_id, "sl": zone.sl,
                          "quarantined": zone_id in self.alg.quarantine_set.zones})
        open_alerts = sum(1 for a in self.siem.alerts if a.state == "open")
        return {
            "sim_time": self.engine.clock,
            "finished": self.finished,
            "halted": self.engine.halted,
            "unsafe": self._unsafe_flagged,
            "unsafe_witness": self.unsafe_witness,
            "zones": zones,
            "quarantine": sorted(self.alg.quarantine_set.zones),
            "ruleset_version": self.alg.ruleset.version,
            "routes": {r: self.ils.phases[r].value for r in sorted(self.ils.phases)},
            "signals": {s: self.ocs[self.oc_by_element[s]].aspect
                        for s in sorted(self.layout.signals)},
            "points": {p: self.ocs[self.oc_by_element[p]].physical_state()
                       for p in sorted(self.layout.points)},
            "alerts_total": len(self.siem.alerts),
            "alerts_open": open_alerts,
            "alerts": [a.to_json() for a in self.siem.alerts[-50:]],
            "events_total": len(self.siem.events),
            "patches": {pid: {"target": rec.target, "staged": rec.staged,
                              "shadow_result": rec.shadow_result}
                        for pid, rec in sorted(self.patches.items())},
        }
