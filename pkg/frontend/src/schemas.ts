/**
 * Zod mirrors of the soc-service JSON bodies. The console validates every
 * response before it touches the view model, and the contract-replay test
 * checks recorded console requests against the request schemas.
 */

import { z } from "zod";

export const ZoneView = z.object({
  id: z.string(),
  sl: z.number().int().min(0).max(4),
  quarantined: z.boolean(),
});

export const AlertView = z.object({
  id: z.number().int(),
  rule_id: z.string(),
  first_time: z.number().int(),
  last_time: z.number().int(),
  event_ids: z.array(z.number().int()),
  severity: z.enum(["info", "warning", "critical"]),
  state: z.enum(["open", "acknowledged", "resolved"]),
  incident: z.enum(["pending", "known", "unknown"]),
  recommended: z.array(z.string()).nullable(),
});

export const StateView = z.object({
  sim_time: z.number().int(),
  finished: z.boolean(),
  halted: z.boolean(),
  unsafe: z.boolean(),
  unsafe_witness: z.record(z.string(), z.unknown()).nullable(),
  zones: z.array(ZoneView),
  quarantine: z.array(z.string()),
  ruleset_version: z.number().int(),
  routes: z.record(z.string(), z.enum(["free", "locking", "locked", "occupied"])),
  signals: z.record(z.string(), z.string()),
  points: z.record(z.string(), z.string()),
  alerts_total: z.number().int(),
  alerts_open: z.number().int(),
  alerts: z.array(AlertView),
  events_total: z.number().int(),
  patches: z.record(z.string(), z.object({
    target: z.string(),
    staged: z.boolean(),
    shadow_result: z.string(),
  })),
});
export type StateViewT = z.infer<typeof StateView>;

export const SecurityEventView = z.object({
  id: z.number().int(),
  time: z.number().int(),
  source: z.string(),
  category: z.string(),
  severity: z.enum(["info", "warning", "critical"]),
  details: z.record(z.string(), z.unknown()),
});
export type SecurityEventT = z.infer<typeof SecurityEventView>;

export const AlertsResponse = z.object({
  alerts: z.array(AlertView),
  latest: z.number().int(),
});

export const ActionKind = z.enum([
  "Quarantine", "Release", "ApplyRuleset", "AckAlert", "ResolveAlert",
  "StagePatch", "ApplyPatch", "InjectDrill",
]);
export type ActionKindT = z.infer<typeof ActionKind>;

export const ActionRequest = z.object({
  kind: ActionKind,
  params: z.record(z.string(), z.unknown()),
  apply_at: z.number().int().optional(),
});
export type ActionRequestT = z.infer<typeof ActionRequest>;

export const ActionResult = z.object({
  status: z.enum(["accepted", "rejected", "pending"]),
  reason: z.string().nullish(),
  applied_at: z.number().int().optional(),
}).passthrough();
export type ActionResultT = z.infer<typeof ActionResult>;

/** Pre-submission validation of action forms; returns a human-usable error. */
export function validateAction(kind: string, params: Record<string, unknown>): string | null {
  if (!ActionKind.options.includes(kind as ActionKindT)) {
    return `unknown action kind: ${kind}`;
  }
  if ((kind === "Quarantine" || kind === "Release") && typeof params.zone !== "string") {
    return "zone is required";
  }
  if ((kind === "AckAlert" || kind === "ResolveAlert")
      && typeof params.alert_id !== "number") {
    return "alert_id is required";
  }
  if (kind === "ApplyRuleset" && typeof params.ruleset !== "object") {
    return "ruleset document is required";
  }
  if (kind === "StagePatch"
      && (typeof params.patch_id !== "string" || typeof params.target !== "string")) {
    return "patch_id and target are required";
  }
  if (kind === "ApplyPatch" && typeof params.patch_id !== "string") {
    return "patch_id is required";
  }
  return null;
}
