"""Taxonomy-driven attack injection.

Directed kinds: impersonation (with or without a compromised key), replay,
vulnerability exploitation (signature-bearing payload), information
gathering (sniffing), physical tampering (optionally alarm-suppressed).
Undirected kinds: flood and random corruption. A DoS flag can ride on any
kind. Capability gates are a pure function of the attacker profile triple:
alarm suppression needs insider knowledge and at least moderate resources;
forging with a key needs a prior successful key compromise in the run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from . import rastalite, secbox

RESOURCES = ("low", "moderate", "high")
MOTIVATION = ("low", "moderate", "high")
KNOWLEDGE = ("generic", "domain", "insider")

DIRECTED_KINDS = ("impersonate", "replay", "exploit", "sniff", "tamper")
UNDIRECTED_KINDS = ("flood", "corrupt")


class CapabilityDeniedError(Exception):
    pass


class UnknownTargetError(Exception):
    pass


class NoCompromisedKeyError(Exception):
    pass


@dataclass(frozen=True)
class AttackerProfile:
    resources: str = "low"
    motivation: str = "low"
    knowledge: str = "generic"

    def __post_init__(self):
        if self.resources not in RESOURCES or self.motivation not in MOTIVATION \
                or self.knowledge not in KNOWLEDGE:
            raise ValueError(f"bad profile {self}")


@dataclass
class AttackScenario:
    kind: str
    start: int
    profile: AttackerProfile
    params: dict = field(default_factory=dict)
    duration_ms: int = 0
    rate_fps: int = 0
    dos: bool = False

    @staticmethod
    def from_json(doc: dict) -> "AttackScenario":
        profile = AttackerProfile(**doc.get("profile", {}))
        known = {"kind", "at", "profile", "duration_ms", "rate_fps", "dos"}
        params = {k: v for k, v in doc.items() if k not in known}
        return AttackScenario(
            kind=doc["kind"],
            start=doc["at"],
            profile=profile,
            params=params,
            duration_ms=doc.get("duration_ms", 0),
            rate_fps=doc.get("rate_fps", 0),
            dos=doc.get("dos", False),
        )


def check_capability(scenario: AttackScenario, all_scenarios: list[AttackScenario]) -> None:
    """Gate check; deterministic and pure in the profile triple."""
    profile = scenario.profile
    if scenario.kind == "tamper" and scenario.params.get("suppress_alarm", False):
        if profile.knowledge != "insider" or profile.resources not in ("moderate", "high"):
            raise CapabilityDeniedError(
                "alarm suppression needs insider knowledge and >= moderate resources")
    if scenario.kind == "impersonate" and scenario.params.get("with_key", False):
        compromises = [s for s in all_scenarios
                       if s.kind == "tamper" and s.params.get("suppress_alarm", False)
                       and s.start <= scenario.start]
        if not compromises:
            raise CapabilityDeniedError(
                "with_key impersonation needs a prior key compromise in the same run")


@dataclass
class CorruptionWindow:
    conduit: str
    channel: Optional[int]
    probability: float
    start: int
    end: int


@dataclass
class SniffTap:
    conduit: str
    channel: Optional[int]
    start: int
    end: int
    records: list = field(default_factory=list)  # (time, wire bytes)


@dataclass
class AttackerState:
    stolen_keys: list = field(default_factory=list)  # KeyRecord references
    captures: list = field(default_factory=list)  # (time, conduit, channel, wire)

    def key_for_box(self, box_id: str, direction: str):
        for record in self.stolen_keys:
            if record.box_id == box_id and record.direction == direction:
                return record
        return None


class AttackEngine:
    """Schedules and executes attack steps against a SimWorld.

    The sim exposes: engine, boxes, keystore, conns, channel sets, inject
    points (deliver_wire), emit_security_event, oc/box lookup helpers. All
    randomness comes from the dedicated "attack" stream.
    """

    def __init__(self, sim, scenarios: list[AttackScenario]):
        self.sim = sim
        self.scenarios = scenarios
        self.rng = sim.engine.fork_rng("attack")
        self.state = AttackerState()
        self.corruptions: list[CorruptionWindow] = []
        self.taps: list[SniffTap] = []
        self.taps_by_index: dict[int, SniffTap] = {}

    # -- scheduling ----------------------------------------------------------

    def inject_all(self) -> list[int]:
        event_ids: list[int] = []
        for idx, scenario in enumerate(self.scenarios):
            event_ids.extend(self.inject(idx, scenario))
        return event_ids

    def inject(self, idx: int, scenario: AttackScenario) -> list[int]:
        check_capability(scenario, self.scenarios)
        self._check_target(scenario)
        engine = self.sim.engine
        ids = [engine.schedule(scenario.start, "attack", "attack-start",
                               {"index": idx, "kind": scenario.kind, "dos": scenario.dos})]
        kind = scenario.kind

        if kind == "tamper":
            ids.append(engine.schedule(scenario.start, "attack", "tamper", {"index": idx}))
        elif kind == "impersonate":
            count = scenario.params.get("count")
            if count is None:
                count = max(1, scenario.rate_fps * scenario.duration_ms // 1000)
            spacing = 1000 // scenario.rate_fps if scenario.rate_fps else 0
            for i in range(count):
                ids.append(engine.schedule(scenario.start + i * spacing, "attack",
                                           "forge-step", {"index": idx, "i": i}))
        elif kind == "replay":
            tap = SniffTap(scenario.params["conduit"], scenario.params.get("channel"),
                           scenario.params["capture_from"], scenario.params["capture_until"])
            self.taps.append(tap)
            self.taps_by_index[idx] = tap
            for i in range(scenario.params.get("copies", 1)):
                ids.append(engine.schedule(scenario.params["replay_at"] + i, "attack",
                                           "replay-step", {"index": idx, "i": i}))
        elif kind == "flood":
            n = scenario.rate_fps * scenario.duration_ms // 1000
            channels = scenario.params.get("channels", [0])
            conduit = scenario.params["conduit"]
            target = scenario.params["target"]
            congestion_ms = scenario.params.get("congestion_ms", 2000)
            channel_set = self.sim.channel_sets[conduit]
            for ch in channels:
                channel_set.channels[ch].congestion.append(
                    (scenario.start, scenario.start + scenario.duration_ms, congestion_ms))
            for i in range(n):
                at = scenario.start + i * 1000 // scenario.rate_fps
                wire = self.rng.randbytes(scenario.params.get("frame_len", 96))
                for ch in channels:
                    ids.append(engine.schedule(at, target, "chan-deliver", {
                        "channel": ch, "wire": wire.hex(), "origin": "attack-flood",
                    }))
        elif kind == "corrupt":
            self.corruptions.append(CorruptionWindow(
                scenario.params["conduit"], scenario.params.get("channel"),
                scenario.params["probability"], scenario.start,
                scenario.start + scenario.duration_ms))
            ids.append(engine.schedule(scenario.start, "attack", "corrupt-armed",
                                       {"index": idx}))
        elif kind == "sniff":
            tap = SniffTap(scenario.params["conduit"], scenario.params.get("channel"),
                           scenario.start, scenario.start + scenario.duration_ms)
            self.taps.append(tap)
            self.taps_by_index[idx] = tap
            ids.append(engine.schedule(scenario.start + scenario.duration_ms, "attack",
                                       "sniff-report", {"index": idx}))
        elif kind == "exploit":
            ids.append(engine.schedule(scenario.start, "attack", "exploit-step",
                                       {"index": idx}))
        else:
            raise UnknownTargetError(f"unknown attack kind {kind}")
        return ids

    def _check_target(self, scenario: AttackScenario) -> None:
        params = scenario.params
        sim = self.sim
        if scenario.kind == "tamper" and params.get("box") not in sim.boxes:
            raise UnknownTargetError(str(params.get("box")))
        if scenario.kind == "impersonate" and params.get("identity") not in sim.oc_ids:
            raise UnknownTargetError(str(params.get("identity")))
        if scenario.kind in ("flood", "corrupt", "sniff", "replay"):
            if params.get("conduit") not in sim.channel_sets:
                raise UnknownTargetError(str(params.get("conduit")))
        if scenario.kind == "flood" and params.get("target") not in sim.ingress_points:
            raise UnknownTargetError(str(params.get("target")))

    # -- wire taps -----------------------------------------------------------

    def observe(self, time: int, conduit: str, channel: int, wire: bytes) -> bytes:
        """Called by the sim for every frame handed to a channel; applies
        active corruption windows and records sniffed bytes. Returns the
        (possibly corrupted) wire bytes."""
        for window in self.corruptions:
            if window.conduit != conduit:
                continue
            if window.channel is not None and window.channel != channel:
                continue
            if not (window.start <= time < window.end):
                continue
            if self.rng.random() < window.probability:
                bit = self.rng.randint(0, len(wire) * 8 - 1)
                flipped = bytearray(wire)
                flipped[bit // 8] ^= 1 << (bit % 8)
                wire = bytes(flipped)
        for tap in self.taps:
            if tap.conduit != conduit:
                continue
            if tap.channel is not None and tap.channel != channel:
                continue
            if tap.start <= time < tap.end:
                tap.records.append((time, wire))
                self.state.captures.append((time, conduit, channel, wire))
        return wire

    # -- step execution ---------------------------------------------------------

    STEP_KINDS = ("tamper", "forge-step", "replay-step", "sniff-report", "exploit-step")

    def handle(self, event) -> None:
        kind = event.kind
        if kind not in self.STEP_KINDS:
            return  # start/result markers
        idx = event.payload["index"]
        scenario = self.scenarios[idx]
        if kind == "tamper":
            self._do_tamper(scenario)
        elif kind == "forge-step":
            self._do_forge(scenario)
        elif kind == "replay-step":
            self._do_replay(idx, scenario)
        elif kind == "sniff-report":
            self._do_sniff_report(idx)
        elif kind == "exploit-step":
            self._do_exploit(scenario)

    def _mark(self, kind: str, payload: dict) -> None:
        self.sim.engine.schedule(self.sim.engine.clock, "attack", kind, payload)

    def _do_tamper(self, scenario: AttackScenario) -> None:
        sim = self.sim
        box = sim.boxes[scenario.params["box"]]
        suppressed = scenario.params.get("suppress_alarm", False)
        outcome = secbox.on_tamper(box, sim.keystore, suppressed, sim.revoke_on_tamper)
        if suppressed:
            self.state.stolen_keys.extend(outcome.leaked)
        self._mark("tamper-result", {
            "box": box.box_id,
            "alarm": outcome.alarm,
            "leaked": [k.key_id for k in outcome.leaked],
            "revoked": outcome.revoked,
        })
        if outcome.alarm:
            sim.emit_security_event(box.box_id, "HousingAlert", "critical", {
                "box": box.box_id, "revoked": outcome.revoked,
            })

    def _do_forge(self, scenario: AttackScenario) -> None:
        sim = self.sim
        identity = scenario.params["identity"]
        with_key = scenario.params.get("with_key", False)
        report = scenario.params.get("report", {})
        status_doc = {"element": report.get("element", identity),
                      "state": report.get("state", "clear")}
        if report.get("segment") is not None:
            status_doc["segment"] = report["segment"]
        status_payload = json.dumps(status_doc, sort_keys=True).encode()
        conduit = sim.fea_conduit
        box_id = sim.box_of_oc[identity]
        if with_key:
            key = self.state.key_for_box(box_id, "up")
            if key is None:
                self._mark("forge-failed", {"identity": identity, "reason": "NoCompromisedKey"})
                return
            conn = sim.conns[(identity, "ils")]
            frame = conn.build_frame("oc-status", status_payload, sim.engine.clock)
            env = secbox.forge_wrap(frame.serialize(), key, identity, "ils")
            wire = secbox.encode_envelope(env)
        else:
            key_ids = [k.key_id for k in sim.keystore.keys_of_box(box_id)]
            key_id = key_ids[-1] if key_ids else "k-ghost"
            env = secbox.Envelope(
                key_id=key_id,
                counter=self.rng.randint(1, 2**48),
                sender=identity, receiver="ils",
                conduit_id=conduit,
                ciphertext=self.rng.randbytes(max(16, len(status_payload))),
                tag=self.rng.randbytes(16),
            )
            wire = secbox.encode_envelope(env)
        channel = scenario.params.get("channel", 0)
        self._mark("forge-injected", {"identity": identity, "with_key": with_key})
        sim.deliver_wire("tc-term", channel, wire, origin="attack-forge")

    def _do_replay(self, idx: int, scenario: AttackScenario) -> None:
        tap = self.taps_by_index.get(idx)
        if tap is not None and tap.records:
            time, wire = tap.records[0]
            target = scenario.params.get("target", "tc-term")
            channel = scenario.params.get("channel", 0)
            self._mark("replay-injected", {"captured_at": time, "target": target})
            self.sim.deliver_wire(target, channel, wire, origin="attack-replay")
            return
        self._mark("replay-failed", {"reason": "nothing captured"})

    def _do_sniff_report(self, idx: int) -> None:
        tap = self.taps_by_index.get(idx)
        if tap is None:
            return
        metadata = []
        recovered = []
        for time, wire in tap.records:
            try:
                env = secbox.decode_envelope(wire)
                metadata.append({"sender": env.sender, "receiver": env.receiver})
                continue
            except (ValueError, UnicodeDecodeError):
                pass
            try:
                frame = rastalite.deserialize(wire)
                metadata.append({"sender": frame.sender, "receiver": frame.receiver})
                recovered.append(frame.payload.hex())
            except rastalite.WireFormatError:
                metadata.append({"sender": None, "receiver": None})
        self._mark("sniff-log", {
            "conduit": tap.conduit,
            "frames_observed": len(tap.records),
            "payloads_recovered": len(recovered),
            "recovered_samples": recovered[:20],
            "metadata_samples": metadata[:20],
        })

    def _do_exploit(self, scenario: AttackScenario) -> None:
        sim = self.sim
        payload = bytes.fromhex(scenario.params["payload_hex"])
        src = scenario.params.get("from_asset", "mdm")
        conn = sim.conns[(src, "ils")]
        frame = conn.build_frame(scenario.params.get("message_kind", "mdm-status"),
                                 payload, sim.engine.clock)
        self._mark("exploit-injected", {"from": src, "bytes": len(payload)})
        sim.submit_to_alg(frame, src, "ils", on_forward_mark="exploit-delivered")
