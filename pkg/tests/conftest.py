from __future__ import annotations

import json
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"
ATTACKS = SCENARIOS / "attacks"


@pytest.fixture(scope="session")
def demo_topology_doc():
    return json.loads((SCENARIOS / "demo_topology.json").read_text())


@pytest.fixture(scope="session")
def demo_scenario_path():
    return SCENARIOS / "demo.json"


@pytest.fixture(scope="session")
def demo_run():
    from railsecsim.runner import run_scenario
    return run_scenario(SCENARIOS / "demo.json", seed=42)


def scenario_path(name: str) -> Path:
    return ATTACKS / name
