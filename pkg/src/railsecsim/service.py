"""Live operator API over a paced simulation run.

The engine runs in one thread, advancing simulated time at wall-clock x
realtime-factor; HTTP handlers communicate with it only through the
serialized action inbox and published snapshots, so the engine stays the
single writer and a live run stays byte-identical to the same actions
scripted in the scenario file.

Endpoints:
  GET  /v1/state                     point-in-time snapshot
  GET  /v1/alerts?since=<id>         long-poll for alerts with id > since
  POST /v1/actions                   {"kind", "params", "apply_at"?}
  GET  /v1/events/stream             server-sent SecurityEvent stream
"""

from __future__ import annotations

import json
import queue
import threading
import time
from pathlib import Path
from typing import Optional

import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .runner import build_sim, trace_to_dicts, write_outputs, RunResult
from .metrics import compute_metrics
from .scenario import Scenario, load_scenario
from .sim import SimWorld

ACTION_KINDS = ("Quarantine", "Release", "ApplyRuleset", "AckAlert", "ResolveAlert",
                "StagePatch", "ApplyPatch", "InjectDrill")


class ServiceState:
    def __init__(self, sim: SimWorld):
        self.sim = sim
        self.lock = threading.Lock()
        self.snapshot: dict = sim.snapshot()
        self.alert_condition = threading.Condition()
        self.event_subscribers: list[queue.Queue] = []
        self.finished = threading.Event()
        self.server_ready = threading.Event()
        self._known_events = 0
        self._known_alerts = 0

    def publish(self) -> None:
        with self.lock:
            self.snapshot = self.sim.snapshot()
        siem = self.sim.siem
        if len(siem.events) > self._known_events:
            fresh = siem.events[self._known_events:]
            self._known_events = len(siem.events)
            with self.lock:
                for subscriber in self.event_subscribers:
                    for event in fresh:
                        subscriber.put(event.to_json())
        if len(siem.alerts) > self._known_alerts:
            self._known_alerts = len(siem.alerts)
            with self.alert_condition:
                self.alert_condition.notify_all()

    def get_snapshot(self) -> dict:
        with self.lock:
            return self.snapshot

    def subscribe(self) -> queue.Queue:
        subscriber: queue.Queue = queue.Queue()
        with self.lock:
            self.event_subscribers.append(subscriber)
        return subscriber

    def unsubscribe(self, subscriber: queue.Queue) -> None:
        with self.lock:
            if subscriber in self.event_subscribers:
                self.event_subscribers.remove(subscriber)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="railsecsim soc-service", version="1.0")

    @app.get("/v1/state")
    def get_state():
        return state.get_snapshot()

    @app.get("/v1/alerts")
    def get_alerts(since: int = -1, timeout_s: float = 20.0):
        deadline = time.monotonic() + min(timeout_s, 25.0)
        while True:
            alerts = [a.to_json() for a in state.sim.siem.alerts if a.id > since]
            if alerts or state.finished.is_set() or time.monotonic() >= deadline:
                return {"alerts": alerts, "latest": len(state.sim.siem.alerts) - 1}
            with state.alert_condition:
                state.alert_condition.wait(timeout=0.1)

    @app.post("/v1/actions")
    async def post_action(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"status": "rejected", "reason": "BadJson"}, status_code=400)
        kind = body.get("kind")
        if kind not in ACTION_KINDS:
            return JSONResponse({"status": "rejected", "reason": "UnknownActionKind"},
                                status_code=400)
        params = body.get("params", {})
        if not isinstance(params, dict):
            return JSONResponse({"status": "rejected", "reason": "BadParams"}, status_code=400)
        apply_at = body.get("apply_at")
        if apply_at is not None and not isinstance(apply_at, int):
            return JSONResponse({"status": "rejected", "reason": "BadApplyAt"}, status_code=400)
        if apply_at is not None and apply_at < state.sim.engine.clock:
            apply_at = None  # apply as soon as possible
        action = state.sim.engine.submit_action(kind, params, apply_at=apply_at)
        if not action.done.wait(timeout=30.0):
            return JSONResponse({"status": "pending", "reason": "NotAppliedYet"},
                                status_code=202)
        result = dict(action.result or {})
        status = 200 if result.get("status") == "accepted" else 409
        return JSONResponse(result, status_code=status)

    @app.get("/v1/events/stream")
    def stream_events():
        subscriber = state.subscribe()

        def generate():
            try:
                yield ": connected\n\n"
                while not state.finished.is_set():
                    try:
                        event = subscriber.get(timeout=1.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield "data: " + json.dumps(event, sort_keys=True) + "\n\n"
            finally:
                state.unsubscribe(subscriber)

        return StreamingResponse(generate(), media_type="text/event-stream")

    return app


def run_paced(sim: SimWorld, state: ServiceState, realtime_factor: float,
              poll_s: float = 0.005) -> None:
    """Advance the sim at wall x factor, draining the inbox between slices."""
    sim.start()
    state.publish()
    state.server_ready.wait(timeout=30.0)
    horizon = sim.scenario.horizon_ms
    anchor = time.monotonic()
    while not sim.engine.halted:
        target = min(horizon, int((time.monotonic() - anchor) * 1000.0 * realtime_factor))
        dispatched = sim.engine.run_slice(target)
        if dispatched:
            state.publish()
        if target >= horizon:
            break
        time.sleep(poll_s)
    if not sim.engine.halted and sim.engine.clock < horizon:
        sim.engine.run_until(horizon)
    sim.finished = True
    state.publish()
    state.finished.set()
    with state.alert_condition:
        state.alert_condition.notify_all()


def serve_scenario(scenario_path: Path | str | Scenario, port: int,
                   realtime_factor: float = 1.0, out_dir: Optional[Path] = None,
                   host: str = "127.0.0.1", ready_event: Optional[threading.Event] = None,
                   linger_s: float = 5.0):
    """Blocks until the run finishes and the post-run linger expires."""
    scenario = scenario_path if isinstance(scenario_path, Scenario) \
        else load_scenario(scenario_path)
    sim = build_sim(scenario)
    state = ServiceState(sim)
    app = create_app(state)

    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)

    def signal_ready():
        while not server.started and not state.finished.is_set():
            time.sleep(0.005)
        state.server_ready.set()
        if ready_event is not None:
            ready_event.set()

    threading.Thread(target=signal_ready, daemon=True).start()
    engine_thread = threading.Thread(
        target=run_paced, args=(sim, state, realtime_factor), daemon=True)
    engine_thread.start()

    def stop_when_finished():
        state.finished.wait()
        engine_thread.join(timeout=10.0)
        if out_dir is not None:
            summary = sim.engine.summary()
            trace = trace_to_dicts(sim)
            report = dict(compute_metrics(trace))
            report["scenario"] = sim.scenario.name
            report["trace_hash"] = summary.trace_hash
            report["events_total"] = len(sim.siem.events)
            write_outputs(RunResult(sim.scenario.name, sim.seed, summary, trace,
                                    report, sim), Path(out_dir))
        time.sleep(linger_s)
        server.should_exit = True

    threading.Thread(target=stop_when_finished, daemon=True).start()
    server.run()
    return sim
