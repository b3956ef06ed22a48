"""Headless scenario execution: build the world, run to the horizon, emit
trace.jsonl / report.json / events.jsonl, and compute the verdict."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .engine import TraceSummary
from .metrics import compute_metrics
from .scenario import Scenario, load_scenario
from .sim import SimWorld

SHADOW_SEED = 7777


@dataclass
class RunResult:
    scenario_name: str
    seed: int
    summary: TraceSummary
    trace: list[dict]
    report: dict
    sim: SimWorld

    @property
    def verdict(self) -> str:
        return self.report["verdict"]


def trace_to_dicts(sim: SimWorld) -> list[dict]:
    return [
        {"time": e.time, "seq": e.seq, "target": e.target, "kind": e.kind,
         "payload": e.payload}
        for e in sim.engine.trace
    ]


def apply_overrides(scenario: Scenario, overrides: dict) -> Scenario:
    """Parameter-level patch application onto a scenario copy."""
    patched = dataclasses.replace(
        scenario,
        secbox=dict(scenario.secbox),
        ils=dict(scenario.ils),
        ruleset_doc=copy.deepcopy(scenario.ruleset_doc),
    )
    for key in sorted(overrides):
        value = overrides[key]
        if key.startswith("secbox."):
            patched.secbox[key.split(".", 1)[1]] = value
        elif key.startswith("ils."):
            patched.ils[key.split(".", 1)[1]] = value
        elif key == "ruleset.remove_rules":
            remove = set(value)
            patched.ruleset_doc["whitelist"] = [
                r for r in patched.ruleset_doc.get("whitelist", [])
                if r["id"] not in remove
            ]
        elif key == "ruleset.add_rules":
            patched.ruleset_doc.setdefault("whitelist", []).extend(value)
        elif key == "ruleset.add_signatures":
            patched.ruleset_doc.setdefault("signatures", []).extend(value)
    return patched


def validation_scenario_for(scenario: Scenario) -> Scenario:
    """The fixed scenario shadow runs execute: either the configured one or
    the current scenario stripped of attacks with a full-availability bar."""
    if scenario.validation_scenario_path and scenario.base_dir is not None:
        return load_scenario(scenario.base_dir / scenario.validation_scenario_path)
    return dataclasses.replace(
        scenario,
        attacks=[],
        scripted_actions=[],
        min_availability=1.0,
        seed=SHADOW_SEED,
    )


def build_sim(scenario: Scenario, seed: Optional[int] = None,
              revoke_on_tamper: Optional[bool] = None) -> SimWorld:
    sim = SimWorld(scenario, seed=seed, revoke_on_tamper=revoke_on_tamper)

    def shadow_runner(overrides: dict) -> str:
        base = validation_scenario_for(scenario)
        shadow = apply_overrides(base, overrides)
        result = run_built(build_sim_bare(shadow))
        return "pass" if result.verdict == "pass" else "fail"

    sim.shadow_runner = shadow_runner
    return sim


def build_sim_bare(scenario: Scenario, seed: Optional[int] = None) -> SimWorld:
    """Shadow runs get no nested shadow runner (patches cannot recurse)."""
    sim = SimWorld(scenario, seed=seed)
    sim.shadow_runner = lambda overrides: "fail"
    return sim


def run_built(sim: SimWorld, until: Optional[int] = None) -> RunResult:
    sim.start()
    horizon = sim.scenario.horizon_ms
    limit = min(horizon, until) if until is not None else horizon
    summary = sim.engine.run_until(limit)
    sim.finished = True
    trace = trace_to_dicts(sim)
    report = dict(compute_metrics(trace))
    report["scenario"] = sim.scenario.name
    report["trace_hash"] = summary.trace_hash
    report["events_total"] = len(sim.siem.events)
    return RunResult(sim.scenario.name, sim.seed, summary, trace, report, sim)


def run_scenario(source, seed: Optional[int] = None, out_dir: Optional[Path] = None,
                 until: Optional[int] = None,
                 revoke_on_tamper: Optional[bool] = None) -> RunResult:
    scenario = source if isinstance(source, Scenario) else load_scenario(source)
    sim = build_sim(scenario, seed=seed, revoke_on_tamper=revoke_on_tamper)
    result = run_built(sim, until=until)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def write_outputs(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.jsonl").write_text(
        "".join(line + "\n" for line in result.sim.engine.trace_lines()))
    (out_dir / "report.json").write_text(json.dumps(result.report, indent=2,
                                                    sort_keys=True) + "\n")
    (out_dir / "events.jsonl").write_text(result.sim.siem.export_events_jsonl())
    (out_dir / "incident_db.json").write_text(
        json.dumps(result.sim.siem.incident_db.to_json(), indent=2) + "\n")
