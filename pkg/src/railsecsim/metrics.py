"""Metrics as a pure function of the exported trace.

Availability is the fraction of issued interlocking commands whose first
acceptance at the target Object Controller lands within the command
deadline; retries share the command id, so a command only delivered by a
late retry still counts against availability. Percentiles use nearest-rank.
An empty command set reports availability 1.0 with a "no-traffic" flag.
"""

from __future__ import annotations

import math
from typing import Optional


class MalformedTraceError(Exception):
    pass


def nearest_rank(values: list[int], q: float) -> Optional[int]:
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def compute_metrics(trace: list[dict]) -> dict:
    if not trace or trace[0].get("kind") != "run-config":
        raise MalformedTraceError("trace does not start with a run-config event")
    config = trace[0]["payload"]
    deadline = config["deadline_ms"]
    min_availability = config.get("min_availability", 0.0)

    issued: dict[str, int] = {}
    accepted: dict[str, int] = {}
    unsafe_count = 0
    unsafe_witness = None
    alerts = []
    events_by_category: dict[str, int] = {}
    alg_forwarded = 0
    alg_dropped: dict[str, int] = {}
    routes_granted = 0
    routes_denied = 0

    for entry in trace:
        kind = entry["kind"]
        payload = entry.get("payload", {})
        if kind == "cmd-issued":
            issued.setdefault(payload["cmd_id"], entry["time"])
        elif kind == "cmd-accepted":
            accepted.setdefault(payload["cmd_id"], entry["time"])
        elif kind == "unsafe-detected":
            unsafe_count += 1
            if unsafe_witness is None:
                unsafe_witness = payload.get("witness")
        elif kind == "alert-raised":
            alerts.append({
                "alert_id": payload["alert_id"],
                "rule_id": payload["rule_id"],
                "raised_at": entry["time"],
                "detection_latency_ms": entry["time"] - payload["first_time"],
                "severity": payload.get("severity"),
            })
        elif kind == "security-event":
            category = payload["category"]
            events_by_category[category] = events_by_category.get(category, 0) + 1
        elif kind == "alg-verdict":
            if payload.get("forward"):
                alg_forwarded += 1
            else:
                reason = payload.get("reason") or "Unknown"
                alg_dropped[reason] = alg_dropped.get(reason, 0) + 1
        elif kind == "route-granted":
            routes_granted += 1
        elif kind == "route-denied":
            routes_denied += 1

    flags = []
    latencies = []
    in_deadline = 0
    for cmd_id, t_issue in issued.items():
        t_accept = accepted.get(cmd_id)
        if t_accept is not None:
            latencies.append(t_accept - t_issue)
            if t_accept - t_issue <= deadline:
                in_deadline += 1
    if issued:
        availability = in_deadline / len(issued)
    else:
        availability = 1.0
        flags.append("no-traffic")

    verdict = "pass" if unsafe_count == 0 and availability >= min_availability else "fail"
    detection = [a["detection_latency_ms"] for a in alerts]

    return {
        "seed": config["seed"],
        "horizon_ms": config["horizon_ms"],
        "deadline_ms": deadline,
        "min_availability": min_availability,
        "verdict": verdict,
        "availability": availability,
        "availability_flags": flags,
        "commands_issued": len(issued),
        "commands_delivered": len(latencies),
        "commands_in_deadline": in_deadline,
        "latency_ms": {"p50": nearest_rank(latencies, 0.50),
                       "p99": nearest_rank(latencies, 0.99)},
        "unsafe_state_count": unsafe_count,
        "unsafe_witness": unsafe_witness,
        "alerts": alerts,
        "max_detection_latency_ms": max(detection) if detection else None,
        "events_by_category": dict(sorted(events_by_category.items())),
        "alg": {"forwarded": alg_forwarded,
                "dropped": dict(sorted(alg_dropped.items()))},
        "routes": {"granted": routes_granted, "denied": routes_denied},
    }
