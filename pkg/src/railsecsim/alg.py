"""Application-layer gateway: zone whitelist, DPI, quarantine, hot rule swaps.

Default deny. Evaluation order: quarantine, whitelist, payload signatures,
per-rule rate limit. Every verdict is stamped with the rule-set version it
was evaluated under; rule sets swap atomically between evaluations and only
with version = current + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .secbox import TokenBucket


class VersionConflictError(Exception):
    pass


class UnknownZoneError(Exception):
    pass


class SignatureAction(str, Enum):
    DROP = "drop"
    DROP_AND_QUARANTINE_SOURCE = "drop_and_quarantine_source"


@dataclass
class WhitelistRule:
    id: str
    src_zone: str
    dst_zone: str
    kind: str  # message kind, "*" allowed
    direction: str = "uni"  # "uni" | "bi"
    max_rate_fps: Optional[int] = None

    def matches(self, src: str, dst: str, kind: str) -> bool:
        kind_ok = self.kind == "*" or self.kind == kind
        if not kind_ok:
            return False
        if self.src_zone == src and self.dst_zone == dst:
            return True
        return self.direction == "bi" and self.src_zone == dst and self.dst_zone == src


@dataclass
class DpiSignature:
    id: str
    pattern: bytes
    action: SignatureAction = SignatureAction.DROP

    def __post_init__(self):
        if not self.pattern:
            raise ValueError(f"signature {self.id}: empty pattern")


@dataclass
class RuleSet:
    version: int
    whitelist: list[WhitelistRule] = field(default_factory=list)
    signatures: list[DpiSignature] = field(default_factory=list)


class DropReason(str, Enum):
    QUARANTINED = "Quarantined"
    NO_RULE = "NoRule"
    RATE_EXCEEDED = "RateExceeded"
    SIGNATURE_MATCH = "SignatureMatch"


@dataclass
class Verdict:
    forward: bool
    version: int
    reason: Optional[DropReason] = None
    rule_id: Optional[str] = None
    signature_id: Optional[str] = None
    quarantine_zone: Optional[str] = None  # zone the matched signature demands quarantined


@dataclass
class QuarantineSet:
    zones: set = field(default_factory=set)
    since: dict = field(default_factory=dict)


class Alg:
    def __init__(self, ruleset: RuleSet, known_zones: set[str]):
        self.ruleset = ruleset
        self.known_zones = set(known_zones)
        self.quarantine_set = QuarantineSet()
        self._rule_buckets: dict[str, TokenBucket] = {}

    # -- evaluation -------------------------------------------------------

    def evaluate(self, src_zone: str, dst_zone: str, sender: str, receiver: str,
                 kind: str, payload: bytes, now_ms: int) -> Verdict:
        version = self.ruleset.version
        if src_zone in self.quarantine_set.zones or dst_zone in self.quarantine_set.zones:
            return Verdict(False, version, DropReason.QUARANTINED)

        rule = None
        for candidate in self.ruleset.whitelist:
            if candidate.matches(src_zone, dst_zone, kind):
                rule = candidate
                break
        if rule is None:
            return Verdict(False, version, DropReason.NO_RULE)

        for signature in self.ruleset.signatures:
            if signature.pattern in payload:
                zone = src_zone if signature.action == SignatureAction.DROP_AND_QUARANTINE_SOURCE else None
                return Verdict(False, version, DropReason.SIGNATURE_MATCH,
                               rule_id=rule.id, signature_id=signature.id,
                               quarantine_zone=zone)

        if rule.max_rate_fps is not None:
            bucket = self._rule_buckets.get(rule.id)
            if bucket is None:
                bucket = TokenBucket(rule.max_rate_fps, rule.max_rate_fps)
                self._rule_buckets[rule.id] = bucket
            if not bucket.try_consume(now_ms):
                return Verdict(False, version, DropReason.RATE_EXCEEDED, rule_id=rule.id)

        return Verdict(True, version, rule_id=rule.id)

    # -- operator surface ----------------------------------------------------

    def apply_ruleset(self, new: RuleSet) -> int:
        if new.version != self.ruleset.version + 1:
            raise VersionConflictError(
                f"expected version {self.ruleset.version + 1}, got {new.version}")
        self.ruleset = new
        self._rule_buckets = {}
        return new.version

    def quarantine(self, zone: str, now_ms: int) -> bool:
        """Returns False when the zone was already quarantined (idempotent)."""
        if zone not in self.known_zones:
            raise UnknownZoneError(zone)
        if zone in self.quarantine_set.zones:
            return False
        self.quarantine_set.zones.add(zone)
        self.quarantine_set.since[zone] = now_ms
        return True

    def release(self, zone: str) -> bool:
        """Returns False for a release of an unquarantined zone (no-op)."""
        if zone not in self.known_zones:
            raise UnknownZoneError(zone)
        if zone not in self.quarantine_set.zones:
            return False
        self.quarantine_set.zones.discard(zone)
        self.quarantine_set.since.pop(zone, None)
        return True
