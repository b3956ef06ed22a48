/**
 * Operator console state. Renders only what the service returned: the model
 * holds the latest snapshot verbatim, a bounded feed of streamed security
 * events, and UI bookkeeping (pending actions, connection health). There is
 * no client-side simulation of any kind.
 */

import { ApiClient } from "./api.js";
import { ActionResultT, SecurityEventT, StateViewT, validateAction } from "./schemas.js";

export interface PendingAction {
  id: number;
  kind: string;
  params: Record<string, unknown>;
  status: "pending" | "accepted" | "rejected";
  reason?: string | null;
  appliedAt?: number;
}

export type ConnectionStatus = "connecting" | "online" | "stale" | "offline";

const STALE_AFTER_MISSES = 3;
const EVENT_FEED_LIMIT = 200;

export class ViewModel {
  snapshot: StateViewT | null = null;
  events: SecurityEventT[] = [];
  pending: PendingAction[] = [];
  selectedZone: string | null = null;
  connection: ConnectionStatus = "connecting";
  missedPolls = 0;
  lastError: string | null = null;
  private actionCounter = 0;
  private listeners: Array<() => void> = [];

  constructor(private api: ApiClient) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  /** One poll cycle; flags staleness after three consecutive misses. */
  async sync(): Promise<void> {
    try {
      const snapshot = await this.api.state();
      this.snapshot = snapshot;
      this.missedPolls = 0;
      this.connection = "online";
      this.lastError = null;
    } catch (err) {
      this.missedPolls += 1;
      if (this.missedPolls >= STALE_AFTER_MISSES) {
        this.connection = "offline";
      } else if (this.snapshot !== null) {
        this.connection = "stale";
      } else {
        this.connection = "connecting";
      }
      this.lastError = String(err);
    }
    this.notify();
  }

  pushEvent(event: SecurityEventT): void {
    this.events.push(event);
    if (this.events.length > EVENT_FEED_LIMIT) {
      this.events.splice(0, this.events.length - EVENT_FEED_LIMIT);
    }
    this.notify();
  }

  selectZone(zoneId: string | null): void {
    this.selectedZone = zoneId;
    this.notify();
  }

  /**
   * Validate, submit, and track an operator action. The action is shown as
   * applied only once the service echoes Accepted.
   */
  async dispatchAction(kind: string, params: Record<string, unknown>,
                       applyAt?: number): Promise<PendingAction> {
    const problem = validateAction(kind, params);
    if (problem !== null) {
      const rejected: PendingAction = {
        id: this.actionCounter++, kind, params,
        status: "rejected", reason: problem,
      };
      this.pending.push(rejected);
      this.notify();
      return rejected;
    }
    const action: PendingAction = {
      id: this.actionCounter++, kind, params, status: "pending",
    };
    this.pending.push(action);
    this.notify();
    let result: ActionResultT;
    try {
      result = await this.api.submitAction({
        kind: kind as never, params, ...(applyAt !== undefined ? { apply_at: applyAt } : {}),
      });
    } catch (err) {
      action.status = "rejected";
      action.reason = `transport error: ${String(err)}`;
      this.notify();
      return action;
    }
    if (result.status === "accepted") {
      action.status = "accepted";
      action.appliedAt = result.applied_at;
    } else {
      action.status = "rejected";
      action.reason = result.reason ?? result.status;
    }
    this.notify();
    return action;
  }

  /** Patch apply stays disabled until its staging shadow run passed. */
  canApplyPatch(patchId: string): boolean {
    const patch = this.snapshot?.patches[patchId];
    return patch !== undefined && patch.staged && patch.shadow_result === "pass";
  }

  zoneQuarantined(zoneId: string): boolean {
    return this.snapshot?.quarantine.includes(zoneId) ?? false;
  }

  openAlerts(): StateViewT["alerts"] {
    return (this.snapshot?.alerts ?? []).filter(a => a.state === "open");
  }
}
