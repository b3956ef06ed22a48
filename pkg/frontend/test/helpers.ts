import { StateViewT } from "../src/schemas.js";

export function snapshotFixture(overrides: Partial<StateViewT> = {}): StateViewT {
  return {
    sim_time: 4200,
    finished: false,
    halted: false,
    unsafe: false,
    unsafe_witness: null,
    zones: [
      { id: "Z-ILS", sl: 3, quarantined: false },
      { id: "Z-SOC", sl: 3, quarantined: false },
      { id: "Z-FEA", sl: 2, quarantined: false },
      { id: "Z-MDM", sl: 2, quarantined: false },
    ],
    quarantine: [],
    ruleset_version: 1,
    routes: { R1: "locked", R2: "free", R3: "free" },
    signals: { SigA: "proceed", SigB: "stop", SigC: "stop" },
    points: { P1: "left", P2: "left" },
    alerts_total: 1,
    alerts_open: 1,
    alerts: [{
      id: 0, rule_id: "cr-authfail", first_time: 1000, last_time: 1400,
      event_ids: [0, 1, 2, 3, 4], severity: "critical", state: "open",
      incident: "known", recommended: ["investigate-source"],
    }],
    events_total: 5,
    patches: {},
    ...overrides,
  };
}

export class FakeApi {
  snapshots: StateViewT[] = [];
  failures = 0;
  submitted: Array<{ kind: string; params: Record<string, unknown> }> = [];
  actionResult: Record<string, unknown> = { status: "accepted", applied_at: 5000 };

  async state(): Promise<StateViewT> {
    if (this.failures > 0) {
      this.failures -= 1;
      throw new Error("connection refused");
    }
    const next = this.snapshots.length > 1 ? this.snapshots.shift() : this.snapshots[0];
    if (!next) throw new Error("no snapshot queued");
    return next;
  }

  async submitAction(request: { kind: string; params: Record<string, unknown> }) {
    this.submitted.push({ kind: request.kind, params: request.params });
    return this.actionResult;
  }
}
