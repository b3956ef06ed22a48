"""Deterministic discrete-event simulator of a defended railway signalling
network: interlocking safety logic, a RaSTA-style redundant safety transport,
security boxes with authenticated encryption, an application-layer gateway,
a SIEM pipeline, a taxonomy-driven attack injector, and a live operator API.
"""

__version__ = "0.1.0"

from .engine import Engine, Event, SimTime, TraceSummary  # noqa: F401
from .metrics import compute_metrics  # noqa: F401
from .runner import RunResult, run_scenario  # noqa: F401
from .scenario import Scenario, load_scenario  # noqa: F401
from .sim import SimWorld  # noqa: F401
