"""Scenario file format: topology reference, traffic plan, attack list,
rule sets, correlation rules, channel models, and scripted operator actions.

Unknown keys are rejected everywhere. Topology referenced by path is resolved
relative to the scenario file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from . import topology as topo
from .alg import DpiSignature, RuleSet, SignatureAction, WhitelistRule
from .attacks import AttackScenario
from .interlocking import LayoutError, parse_layout


class ScenarioError(Exception):
    pass


_PROFILE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "resources": {"enum": ["low", "moderate", "high"]},
        "motivation": {"enum": ["low", "moderate", "high"]},
        "knowledge": {"enum": ["generic", "domain", "insider"]},
    },
}

_CHANNEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "latency_ms": {"type": "integer", "minimum": 0},
        "jitter_ms": {"type": "integer", "minimum": 0},
        "loss": {"type": "number", "minimum": 0, "maximum": 1},
        "up": {"type": "boolean"},
    },
}

RULESET_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version"],
    "properties": {
        "version": {"type": "integer", "minimum": 1},
        "whitelist": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "src_zone", "dst_zone", "kind"],
                "properties": {
                    "id": {"type": "string"},
                    "src_zone": {"type": "string"},
                    "dst_zone": {"type": "string"},
                    "kind": {"type": "string"},
                    "direction": {"enum": ["uni", "bi"]},
                    "max_rate_fps": {"type": "integer", "minimum": 1},
                },
            },
        },
        "signatures": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "pattern_hex"],
                "properties": {
                    "id": {"type": "string"},
                    "pattern_hex": {"type": "string", "minLength": 2},
                    "action": {"enum": ["drop", "drop_and_quarantine_source"]},
                },
            },
        },
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "horizon_ms"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "topology_path": {"type": "string"},
        "topology": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "horizon_ms": {"type": "integer", "exclusiveMinimum": 0},
        "deadline_ms": {"type": "integer", "exclusiveMinimum": 0},
        "min_availability": {"type": "number", "minimum": 0, "maximum": 1},
        "alg_delay_ms": {"type": "integer", "minimum": 0},
        "channel_defaults": _CHANNEL_SCHEMA,
        "channels": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": _CHANNEL_SCHEMA},
        },
        "secbox": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rate_capacity": {"type": "integer", "exclusiveMinimum": 0},
                "refill_per_s": {"type": "integer", "exclusiveMinimum": 0},
                "revoke_on_tamper": {"type": "boolean"},
            },
        },
        "ils": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "retry_timeout_ms": {"type": "integer", "exclusiveMinimum": 0},
                "max_retries": {"type": "integer", "minimum": 0},
                "point_move_ms": {"type": "integer", "exclusiveMinimum": 0},
                "signal_ms": {"type": "integer", "exclusiveMinimum": 0},
            },
        },
        "traffic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "route_requests": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["at", "route"],
                        "properties": {
                            "at": {"type": "integer", "minimum": 0},
                            "route": {"type": "string"},
                            "train": {"type": "string"},
                        },
                    },
                },
                "trains": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["id"],
                        "properties": {
                            "id": {"type": "string"},
                            "stall_on": {"type": "string"},
                        },
                    },
                },
                "mdm_ping_every_ms": {"type": "integer", "exclusiveMinimum": 0},
                "train_enter_delay_ms": {"type": "integer", "minimum": 0},
                "train_dwell_ms": {"type": "integer", "exclusiveMinimum": 0},
                "train_clear_lag_ms": {"type": "integer", "exclusiveMinimum": 0},
            },
        },
        "ruleset": RULESET_SCHEMA,
        "correlation_rules": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "category", "threshold", "window_ms"],
                "properties": {
                    "id": {"type": "string"},
                    "category": {"type": "string"},
                    "source": {"type": "string"},
                    "threshold": {"type": "integer", "minimum": 1},
                    "window_ms": {"type": "integer", "exclusiveMinimum": 0},
                    "severity": {"enum": ["info", "warning", "critical"]},
                },
            },
        },
        "attacks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "at"],
                "properties": {
                    "kind": {"enum": ["impersonate", "replay", "exploit", "sniff",
                                      "tamper", "flood", "corrupt"]},
                    "at": {"type": "integer", "minimum": 0},
                    "profile": _PROFILE_SCHEMA,
                    "duration_ms": {"type": "integer", "minimum": 0},
                    "rate_fps": {"type": "integer", "minimum": 0},
                    "dos": {"type": "boolean"},
                },
            },
        },
        "scripted_actions": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["at", "kind"],
                "properties": {
                    "at": {"type": "integer", "minimum": 0},
                    "kind": {"type": "string"},
                    "params": {"type": "object"},
                },
            },
        },
        "incident_db_path": {"type": "string"},
        "validation_scenario_path": {"type": "string"},
    },
}

DEFAULT_CHANNEL = {"latency_ms": 10, "jitter_ms": 5, "loss": 0.0, "up": True}
DEFAULT_SECBOX = {"rate_capacity": 30, "refill_per_s": 15, "revoke_on_tamper": True}
DEFAULT_ILS = {"retry_timeout_ms": 1500, "max_retries": 2,
               "point_move_ms": 2000, "signal_ms": 200}
DEFAULT_TRAFFIC = {"route_requests": [], "trains": [],
                   "train_enter_delay_ms": 500, "train_dwell_ms": 1500,
                   "train_clear_lag_ms": 400}


def ruleset_from_json(doc: dict) -> RuleSet:
    jsonschema.validate(doc, RULESET_SCHEMA)
    whitelist = [
        WhitelistRule(
            id=r["id"], src_zone=r["src_zone"], dst_zone=r["dst_zone"],
            kind=r["kind"], direction=r.get("direction", "uni"),
            max_rate_fps=r.get("max_rate_fps"),
        )
        for r in doc.get("whitelist", [])
    ]
    signatures = [
        DpiSignature(id=s["id"], pattern=bytes.fromhex(s["pattern_hex"]),
                     action=SignatureAction(s.get("action", "drop")))
        for s in doc.get("signatures", [])
    ]
    return RuleSet(doc["version"], whitelist, signatures)


def ruleset_to_json(ruleset: RuleSet) -> dict:
    return {
        "version": ruleset.version,
        "whitelist": [
            {k: v for k, v in {
                "id": r.id, "src_zone": r.src_zone, "dst_zone": r.dst_zone,
                "kind": r.kind, "direction": r.direction,
                "max_rate_fps": r.max_rate_fps,
            }.items() if v is not None}
            for r in ruleset.whitelist
        ],
        "signatures": [
            {"id": s.id, "pattern_hex": s.pattern.hex(), "action": s.action.value}
            for s in ruleset.signatures
        ],
    }


@dataclass
class Scenario:
    name: str
    topology_doc: dict
    horizon_ms: int
    seed: int = 1
    deadline_ms: int = 500
    min_availability: float = 0.0
    alg_delay_ms: int = 1
    channel_defaults: dict = field(default_factory=lambda: dict(DEFAULT_CHANNEL))
    channels: dict = field(default_factory=dict)
    secbox: dict = field(default_factory=lambda: dict(DEFAULT_SECBOX))
    ils: dict = field(default_factory=lambda: dict(DEFAULT_ILS))
    traffic: dict = field(default_factory=lambda: dict(DEFAULT_TRAFFIC))
    ruleset_doc: dict = field(default_factory=lambda: {"version": 1})
    correlation_rules: list = field(default_factory=list)
    attacks: list = field(default_factory=list)  # AttackScenario
    scripted_actions: list = field(default_factory=list)
    incident_db_doc: Optional[dict] = None
    validation_scenario_path: Optional[str] = None
    base_dir: Optional[Path] = None

    def to_overridable_dict(self) -> dict:
        """Raw knobs a staged patch may override (see runner.apply_overrides)."""
        return {
            "secbox": dict(self.secbox),
            "ils": dict(self.ils),
            "ruleset": json.loads(json.dumps(self.ruleset_doc)),
        }


def default_incident_db_doc() -> dict:
    return {
        "incidents": [
            {"signature": "AuthFail@SecurityBox",
             "actions": ["investigate-source", "rotate-conduit-keys"],
             "origin": "seeded"},
            {"signature": "HousingAlert@SecurityBox",
             "actions": ["quarantine-zone", "revoke-keys"],
             "origin": "seeded"},
            {"signature": "DropRate@SecurityBox",
             "actions": ["tighten-rate-limit", "monitor-availability"],
             "origin": "seeded"},
            {"signature": "SignatureMatch@ALG",
             "actions": ["quarantine-source-zone", "update-signatures"],
             "origin": "seeded"},
        ]
    }


def load_scenario(source: str | Path | dict, base_dir: Optional[Path] = None) -> Scenario:
    if isinstance(source, (str, Path)):
        path = Path(source)
        base_dir = path.parent
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    else:
        doc = source

    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"scenario {where}: {exc.message}") from exc

    if "topology" in doc:
        topology_doc = doc["topology"]
    elif "topology_path" in doc:
        if base_dir is None:
            raise ScenarioError("topology_path given but no base directory known")
        topo_path = base_dir / doc["topology_path"]
        try:
            topology_doc = json.loads(topo_path.read_text())
        except FileNotFoundError as exc:
            raise ScenarioError(f"topology file not found: {topo_path}") from exc
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{topo_path}: invalid JSON: {exc.msg}") from exc
    else:
        raise ScenarioError("scenario needs either 'topology' or 'topology_path'")

    incident_doc = None
    if "incident_db_path" in doc:
        if base_dir is None:
            raise ScenarioError("incident_db_path given but no base directory known")
        db_path = base_dir / doc["incident_db_path"]
        try:
            incident_doc = json.loads(db_path.read_text())
        except FileNotFoundError as exc:
            raise ScenarioError(f"incident database not found: {db_path}") from exc
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{db_path}: invalid JSON: {exc.msg}") from exc

    traffic = dict(DEFAULT_TRAFFIC)
    traffic.update(doc.get("traffic", {}))
    secbox_cfg = dict(DEFAULT_SECBOX)
    secbox_cfg.update(doc.get("secbox", {}))
    ils_cfg = dict(DEFAULT_ILS)
    ils_cfg.update(doc.get("ils", {}))
    channel_defaults = dict(DEFAULT_CHANNEL)
    channel_defaults.update(doc.get("channel_defaults", {}))

    return Scenario(
        name=doc["name"],
        topology_doc=topology_doc,
        horizon_ms=doc["horizon_ms"],
        seed=doc.get("seed", 1),
        deadline_ms=doc.get("deadline_ms", 500),
        min_availability=doc.get("min_availability", 0.0),
        alg_delay_ms=doc.get("alg_delay_ms", 1),
        channel_defaults=channel_defaults,
        channels=doc.get("channels", {}),
        secbox=secbox_cfg,
        ils=ils_cfg,
        traffic=traffic,
        ruleset_doc=doc.get("ruleset", {"version": 1}),
        correlation_rules=doc.get("correlation_rules", []),
        attacks=[AttackScenario.from_json(a) for a in doc.get("attacks", [])],
        scripted_actions=doc.get("scripted_actions", []),
        incident_db_doc=incident_doc,
        validation_scenario_path=doc.get("validation_scenario_path"),
        base_dir=base_dir,
    )


def validate_scenario(scenario: Scenario) -> list[topo.Violation]:
    """Topology violations plus cross-reference checks, as violation records."""
    out: list[topo.Violation] = []
    try:
        topology = topo.load_topology(scenario.topology_doc)
    except topo.ParseError as exc:
        return [topo.Violation("TopologyParseError", str(exc))]
    out.extend(topology.violations)

    layout = None
    if topology.layout is None:
        out.append(topo.Violation("MissingLayout", "<topology>"))
    else:
        try:
            layout = parse_layout(topology.layout)
        except LayoutError as exc:
            out.append(topo.Violation("LayoutError", str(exc)))

    zone_ids = set(topology.zones)
    for rule in scenario.ruleset_doc.get("whitelist", []):
        for key in ("src_zone", "dst_zone"):
            if rule[key] not in zone_ids:
                out.append(topo.Violation("UnknownZoneInRule", rule["id"], detail=rule[key]))

    for conduit_id, specs in scenario.channels.items():
        conduit = topology.conduits.get(conduit_id)
        if conduit is None:
            out.append(topo.Violation("UnknownConduitInChannels", conduit_id))
        elif len(specs) != conduit.channel_count:
            out.append(topo.Violation(
                "ChannelCountMismatch", conduit_id,
                detail=f"scenario lists {len(specs)} channels, conduit declares "
                       f"{conduit.channel_count}"))

    if layout is not None:
        for request in scenario.traffic.get("route_requests", []):
            if request["route"] not in layout.routes:
                out.append(topo.Violation("UnknownRoute", request["route"]))
        trains = {t["id"] for t in scenario.traffic.get("trains", [])}
        for request in scenario.traffic.get("route_requests", []):
            if "train" in request and request["train"] not in trains:
                out.append(topo.Violation("UnknownTrain", request["train"]))

    asset_ids = set(topology.assets)
    conduit_ids = set(topology.conduits)
    for attack in scenario.attacks:
        params = attack.params
        if attack.kind == "tamper" and params.get("box") not in asset_ids:
            out.append(topo.Violation("UnknownTarget", str(params.get("box"))))
        if attack.kind == "impersonate" and params.get("identity") not in asset_ids:
            out.append(topo.Violation("UnknownTarget", str(params.get("identity"))))
        if attack.kind in ("flood", "corrupt", "sniff", "replay") \
                and params.get("conduit") not in conduit_ids:
            out.append(topo.Violation("UnknownTarget", str(params.get("conduit"))))
        if attack.start + attack.duration_ms > scenario.horizon_ms:
            out.append(topo.Violation("AttackBeyondHorizon", attack.kind, grade="warning"))

    return out
