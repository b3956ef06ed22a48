"""Security event store, sliding-window correlation, incident database.

Correlation is event-time based: per rule, unconsumed matching events older
than the window are evicted on every ingest; when the buffer reaches the
rule's threshold an alert fires carrying the whole buffer as contributors,
and those events are consumed (each event feeds at most one alert per rule).
Alerts are matched against the incident database; unknown signatures open a
forensics task, and resolving an acknowledged alert teaches the database.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional


class EventCategory(str, Enum):
    AUTH_FAIL = "AuthFail"
    INTEGRITY_FAIL = "IntegrityFail"
    WRONG_NETWORK = "WrongNetwork"
    DROP_NO_RULE = "DropNoRule"
    DROP_RATE = "DropRate"
    DROP_QUARANTINED = "DropQuarantined"
    SIGNATURE_MATCH = "SignatureMatch"
    HOUSING_ALERT = "HousingAlert"
    UNSOLICITED_STATUS = "UnsolicitedStatus"
    QUARANTINE = "Quarantine"
    RULE_CHANGE = "RuleChange"
    AVAILABILITY_DEGRADED = "AvailabilityDegraded"
    ALERT_HANDLING = "AlertHandling"
    PATCH = "Patch"
    DRILL = "Drill"
    MISCONFIG = "Misconfig"


SEVERITIES = ("info", "warning", "critical")


class AlertNotAcknowledgedError(Exception):
    pass


@dataclass
class SecurityEvent:
    id: int
    time: int
    source: str
    category: str
    severity: str
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"id": self.id, "time": self.time, "source": self.source,
                "category": self.category, "severity": self.severity,
                "details": self.details}


@dataclass
class CorrelationRule:
    id: str
    category: str
    threshold: int
    window_ms: int
    severity: str = "warning"
    source: Optional[str] = None

    def matches(self, event: SecurityEvent) -> bool:
        if event.category != self.category:
            return False
        return self.source is None or self.source == event.source


@dataclass
class Alert:
    id: int
    rule_id: str
    first_time: int
    last_time: int
    event_ids: list[int]
    severity: str
    state: str = "open"  # open | acknowledged | resolved
    recommended: Optional[list] = None
    incident: str = "pending"  # pending | known | unknown
    resolution: Optional[list] = None

    def to_json(self) -> dict:
        return {"id": self.id, "rule_id": self.rule_id, "first_time": self.first_time,
                "last_time": self.last_time, "event_ids": self.event_ids,
                "severity": self.severity, "state": self.state,
                "incident": self.incident, "recommended": self.recommended}


def signature_key(categories, source_kind: str) -> str:
    return "+".join(sorted(set(categories))) + "@" + source_kind


@dataclass
class IncidentRecord:
    signature: str
    actions: list[str]
    origin: str = "seeded"  # seeded | learned


class IncidentDb:
    def __init__(self, records: Optional[list[IncidentRecord]] = None):
        self.records: dict[str, IncidentRecord] = {}
        for record in records or []:
            self.records[record.signature] = record

    def match(self, signature: str) -> Optional[IncidentRecord]:
        return self.records.get(signature)

    def learn(self, signature: str, actions: list[str]) -> IncidentRecord:
        record = IncidentRecord(signature, list(actions), origin="learned")
        self.records[signature] = record
        return record

    @staticmethod
    def from_json(doc: dict) -> "IncidentDb":
        records = [IncidentRecord(r["signature"], list(r["actions"]), r.get("origin", "seeded"))
                   for r in doc.get("incidents", [])]
        return IncidentDb(records)

    def to_json(self) -> dict:
        return {"incidents": [
            {"signature": r.signature, "actions": r.actions, "origin": r.origin}
            for r in self.records.values()
        ]}


@dataclass
class ForensicsTask:
    id: int
    alert_id: int
    signature: str
    opened_at: int
    status: str = "open"


class Siem:
    def __init__(self, rules: list[CorrelationRule], incident_db: IncidentDb,
                 source_kind_of: Callable[[str], str],
                 on_alert: Optional[Callable[[Alert], None]] = None):
        self.rules = rules
        self.incident_db = incident_db
        self.source_kind_of = source_kind_of
        self.on_alert = on_alert
        self.events: list[SecurityEvent] = []
        self.alerts: list[Alert] = []
        self.forensics: list[ForensicsTask] = []
        self._buffers: dict[str, list[SecurityEvent]] = {r.id: [] for r in rules}

    # -- ingestion + correlation -------------------------------------------

    def ingest(self, time: int, source: str, category: str, severity: str,
               details: Optional[dict] = None) -> SecurityEvent:
        event = SecurityEvent(len(self.events), time, source, category, severity,
                              details or {})
        self.events.append(event)
        for rule in self.rules:
            if not rule.matches(event):
                continue
            buffer = self._buffers[rule.id]
            buffer[:] = [e for e in buffer if e.time >= event.time - rule.window_ms]
            buffer.append(event)
            if len(buffer) >= rule.threshold:
                self._raise_alert(rule, list(buffer))
                buffer.clear()
        return event

    def _raise_alert(self, rule: CorrelationRule, contributors: list[SecurityEvent]) -> None:
        alert = Alert(
            id=len(self.alerts),
            rule_id=rule.id,
            first_time=contributors[0].time,
            last_time=contributors[-1].time,
            event_ids=[e.id for e in contributors],
            severity=rule.severity,
        )
        self.alerts.append(alert)
        self.match_incident(alert)
        if self.on_alert is not None:
            self.on_alert(alert)

    # -- incident database loop -------------------------------------------------

    def alert_signature(self, alert: Alert) -> str:
        categories = [self.events[i].category for i in alert.event_ids]
        source_kind = self.source_kind_of(self.events[alert.event_ids[0]].source)
        return signature_key(categories, source_kind)

    def match_incident(self, alert: Alert) -> Optional[list[str]]:
        signature = self.alert_signature(alert)
        record = self.incident_db.match(signature)
        if record is not None:
            alert.incident = "known"
            alert.recommended = list(record.actions)
            return alert.recommended
        alert.incident = "unknown"
        self.forensics.append(ForensicsTask(len(self.forensics), alert.id, signature,
                                            alert.last_time))
        return None

    def acknowledge(self, alert_id: int) -> Alert:
        alert = self.alerts[alert_id]
        if alert.state == "open":
            alert.state = "acknowledged"
        return alert

    def record_resolution(self, alert_id: int, actions: list[str]) -> Alert:
        """Resolve an acknowledged alert and teach the incident database."""
        alert = self.alerts[alert_id]
        if alert.state == "resolved":
            return alert
        if alert.state != "acknowledged":
            raise AlertNotAcknowledgedError(f"alert {alert_id} is {alert.state}")
        alert.state = "resolved"
        alert.resolution = list(actions)
        signature = self.alert_signature(alert)
        if self.incident_db.match(signature) is None:
            self.incident_db.learn(signature, actions)
        for task in self.forensics:
            if task.alert_id == alert_id:
                task.status = "closed"
        return alert

    # -- export ----------------------------------------------------------------

    def export_events_jsonl(self) -> str:
        return "\n".join(
            json.dumps(e.to_json(), sort_keys=True, separators=(",", ":"))
            for e in self.events
        ) + ("\n" if self.events else "")
