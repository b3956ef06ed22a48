"""World model: assets, zones with Security Levels, conduits, physical links.

Every asset must sit in exactly one zone xor one conduit; conduits connecting
zones of equal SL are EqualSL, all others CrossSL. Validation returns
violations as data (warning or error grade) rather than raising, so what-if
topologies can still be loaded and inspected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import jsonschema


class ParseError(Exception):
    """Topology document malformed; message carries the offending path."""


class UnknownZoneError(Exception):
    pass


class AssetKind(str, Enum):
    OPERATING_CENTER = "OperatingCenter"
    SECURITY_CENTER = "SecurityCenter"
    ILS = "ILS"
    AUXILIARY_SYSTEM = "AuxiliarySystem"
    MDM = "MDM"
    ALG = "ALG"
    OBJECT_CONTROLLER = "ObjectController"
    FIELD_ELEMENT = "FieldElement"
    SECURITY_BOX = "SecurityBox"
    SWITCH = "Switch"
    ROUTER = "Router"
    SIEM_SERVER = "SiemServer"


class FieldElementKind(str, Enum):
    SIGNAL = "signal"
    POINT = "point"
    TRAIN_DETECTION = "train-detection"


class ConduitClass(str, Enum):
    EQUAL_SL = "EqualSL"
    CROSS_SL = "CrossSL"


@dataclass
class Asset:
    id: str
    kind: AssetKind
    subkind: Optional[FieldElementKind] = None
    location: Optional[str] = None  # zone id or conduit id, set during load


@dataclass
class Zone:
    id: str
    sl: int
    members: list[str]


@dataclass
class Conduit:
    id: str
    endpoints: tuple[str, str]
    cls: ConduitClass
    channel_count: int
    signalling_relevant: bool
    members: list[str] = field(default_factory=list)


@dataclass
class Violation:
    kind: str
    subject: str
    grade: str = "error"  # "error" | "warning"
    detail: str = ""


@dataclass
class Topology:
    assets: dict[str, Asset]
    zones: dict[str, Zone]
    conduits: dict[str, Conduit]
    links: list[tuple[str, str]]
    layout: Optional[dict] = None
    violations: list[Violation] = field(default_factory=list)

    def zone_of(self, asset_id: str) -> Optional[str]:
        asset = self.assets.get(asset_id)
        if asset is None:
            return None
        if asset.location in self.zones:
            return asset.location
        return None

    def conduit_between(self, zone_a: str, zone_b: str) -> Optional[Conduit]:
        for conduit in self.conduits.values():
            if set(conduit.endpoints) == {zone_a, zone_b}:
                return conduit
        return None

    def error_violations(self) -> list[Violation]:
        return [v for v in self.violations if v.grade == "error"]


_SUBKIND_VALUES = [k.value for k in FieldElementKind]

TOPOLOGY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["assets", "zones", "conduits", "links"],
    "properties": {
        "assets": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "kind"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "kind": {"enum": [k.value for k in AssetKind]},
                    "subkind": {"enum": _SUBKIND_VALUES},
                },
            },
        },
        "zones": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "sl", "members"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "sl": {"type": "integer", "minimum": 0, "maximum": 4},
                    "members": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                },
            },
        },
        "conduits": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "endpoints", "class", "channel_count"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "endpoints": {
                        "type": "array",
                        "items": {"type": "string"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "class": {"enum": [c.value for c in ConduitClass]},
                    "channel_count": {"type": "integer", "minimum": 1},
                    "signalling_relevant": {"type": "boolean"},
                    "members": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "links": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "string"},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "layout": {"type": "object"},
    },
}


def classify_conduit(a: Zone, b: Zone) -> ConduitClass:
    if a is None or b is None:
        raise UnknownZoneError("conduit endpoint refers to a missing zone")
    return ConduitClass.EQUAL_SL if a.sl == b.sl else ConduitClass.CROSS_SL


def validate(topology: Topology) -> list[Violation]:
    """Check the IEC 62443 partition rules; violations are data, not errors."""
    out: list[Violation] = []
    containers: dict[str, list[str]] = {asset_id: [] for asset_id in topology.assets}

    for zone in topology.zones.values():
        if not zone.members:
            out.append(Violation("EmptyZone", zone.id))
        if zone.sl not in (2, 3):
            out.append(Violation(
                "UnusualSecurityLevel", zone.id, grade="warning",
                detail=f"sl={zone.sl} outside the reference range {{2,3}}",
            ))
        for member in zone.members:
            if member not in containers:
                out.append(Violation("UnknownMember", zone.id, detail=member))
            else:
                containers[member].append(zone.id)

    for conduit in topology.conduits.values():
        for member in conduit.members:
            if member not in containers:
                out.append(Violation("UnknownMember", conduit.id, detail=member))
            else:
                containers[member].append(conduit.id)
        zone_a = topology.zones.get(conduit.endpoints[0])
        zone_b = topology.zones.get(conduit.endpoints[1])
        if zone_a is None or zone_b is None:
            out.append(Violation("UnknownZoneEndpoint", conduit.id))
            continue
        if classify_conduit(zone_a, zone_b) != conduit.cls:
            out.append(Violation(
                "ClassMismatch", conduit.id,
                detail=f"declared {conduit.cls.value} between SL {zone_a.sl} and SL {zone_b.sl}",
            ))
        if conduit.signalling_relevant and conduit.channel_count < 2:
            out.append(Violation(
                "InsufficientChannels", conduit.id,
                detail=f"signalling-relevant conduit has {conduit.channel_count} channel(s)",
            ))

    for asset_id in sorted(containers):
        holders = containers[asset_id]
        if len(holders) == 0:
            out.append(Violation("UnassignedAsset", asset_id))
        elif len(holders) > 1:
            out.append(Violation("DuplicateMembership", asset_id, detail=",".join(holders)))

    for a, b in topology.links:
        if a not in topology.assets or b not in topology.assets:
            out.append(Violation("UnknownLinkEndpoint", f"{a}-{b}"))

    return out


def load_topology(document: str | dict) -> Topology:
    """Parse, build, and auto-validate a topology document."""
    if isinstance(document, str):
        if not document.strip():
            raise ParseError("empty document")
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    else:
        doc = document

    try:
        jsonschema.validate(doc, TOPOLOGY_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"{path}: {exc.message}") from exc

    assets = {}
    for raw in doc["assets"]:
        if raw["id"] in assets:
            raise ParseError(f"assets: duplicate id {raw['id']}")
        subkind = FieldElementKind(raw["subkind"]) if "subkind" in raw else None
        assets[raw["id"]] = Asset(raw["id"], AssetKind(raw["kind"]), subkind)

    zones = {}
    for raw in doc["zones"]:
        if raw["id"] in zones:
            raise ParseError(f"zones: duplicate id {raw['id']}")
        zones[raw["id"]] = Zone(raw["id"], raw["sl"], list(raw["members"]))

    conduits = {}
    for raw in doc["conduits"]:
        if raw["id"] in conduits:
            raise ParseError(f"conduits: duplicate id {raw['id']}")
        conduits[raw["id"]] = Conduit(
            id=raw["id"],
            endpoints=(raw["endpoints"][0], raw["endpoints"][1]),
            cls=ConduitClass(raw["class"]),
            channel_count=raw["channel_count"],
            signalling_relevant=raw.get("signalling_relevant", False),
            members=list(raw.get("members", [])),
        )

    links = [(a, b) for a, b in doc["links"]]
    topology = Topology(assets, zones, conduits, links, layout=doc.get("layout"))

    for zone in topology.zones.values():
        for member in zone.members:
            if member in topology.assets and topology.assets[member].location is None:
                topology.assets[member].location = zone.id
    for conduit in topology.conduits.values():
        for member in conduit.members:
            if member in topology.assets and topology.assets[member].location is None:
                topology.assets[member].location = conduit.id

    topology.violations = validate(topology)
    return topology
