import { describe, expect, it } from "vitest";

import { ActionRequest, ActionResult, SecurityEventView, StateView,
         validateAction } from "../src/schemas.js";
import { snapshotFixture } from "./helpers.js";

describe("schemas", () => {
  it("accepts a well-formed snapshot", () => {
    expect(() => StateView.parse(snapshotFixture())).not.toThrow();
  });

  it("rejects a snapshot with a bad route phase", () => {
    const bad = { ...snapshotFixture(), routes: { R1: "teleporting" } };
    expect(() => StateView.parse(bad)).toThrow();
  });

  it("rejects out-of-range security levels", () => {
    const bad = snapshotFixture();
    bad.zones[0]!.sl = 9;
    expect(() => StateView.parse(bad)).toThrow();
  });

  it("accepts the documented action bodies", () => {
    expect(() => ActionRequest.parse({
      kind: "Quarantine", params: { zone: "Z-FEA" }, apply_at: 8000,
    })).not.toThrow();
    expect(() => ActionRequest.parse({ kind: "Reboot", params: {} })).toThrow();
  });

  it("parses accepted and rejected action results", () => {
    expect(ActionResult.parse({ status: "accepted", applied_at: 12 }).status)
      .toBe("accepted");
    expect(ActionResult.parse({ status: "rejected", reason: "UnknownZone" }).reason)
      .toBe("UnknownZone");
  });

  it("parses pushed security events", () => {
    expect(() => SecurityEventView.parse({
      id: 3, time: 900, source: "box-td2", category: "AuthFail",
      severity: "warning", details: { reason: "bad-tag" },
    })).not.toThrow();
  });

  it("pre-submission validation catches incomplete forms", () => {
    expect(validateAction("Quarantine", {})).toMatch(/zone/);
    expect(validateAction("AckAlert", { alert_id: "three" })).toMatch(/alert_id/);
    expect(validateAction("Quarantine", { zone: "Z-FEA" })).toBeNull();
    expect(validateAction("Teleport", {})).toMatch(/unknown action/);
  });
});
