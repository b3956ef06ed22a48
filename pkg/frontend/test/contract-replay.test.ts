// @vitest-environment jsdom
//
// API-contract replay: the recorded console session must (a) contain only
// documented service calls, validated offline against the request schemas,
// and (b) replay cleanly against a live soc-service with every response
// passing its schema. The live half spawns the simulator and is skipped when
// python or the railsecsim package is missing.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ActionRequest, ActionResult, AlertsResponse, StateView } from "../src/schemas.js";
import { ViewModel } from "../src/viewmodel.js";
import { renderApp } from "../src/render.js";

const here = dirname(fileURLToPath(import.meta.url));
const repoRoot = join(here, "..", "..");
const fixturePath = join(here, "..", "fixtures", "console-session.json");
const session: { method: string; path: string; body?: unknown }[] =
  JSON.parse(readFileSync(fixturePath, "utf-8")).session;

const DOCUMENTED_GET = [
  /^\/v1\/state$/,
  /^\/v1\/alerts\?since=-?\d+(&timeout_s=[\d.]+)?$/,
  /^\/v1\/events\/stream$/,
];

describe("recorded session against the documented API (offline)", () => {
  it("contains only documented calls", () => {
    expect(session.length).toBeGreaterThanOrEqual(6);
    for (const request of session) {
      if (request.method === "GET") {
        expect(DOCUMENTED_GET.some(re => re.test(request.path)),
               `undocumented GET ${request.path}`).toBe(true);
      } else {
        expect(request.method).toBe("POST");
        expect(request.path).toBe("/v1/actions");
        expect(() => ActionRequest.parse(request.body)).not.toThrow();
      }
    }
  });

  it("exercises state polling, the event stream, and actions", () => {
    const paths = session.map(r => `${r.method} ${r.path.split("?")[0]}`);
    expect(paths).toContain("GET /v1/state");
    expect(paths).toContain("GET /v1/events/stream");
    expect(paths).toContain("POST /v1/actions");
  });
});

function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import railsecsim"], { cwd: repoRoot });
  return probe.status === 0;
}

const live = pythonAvailable() ? describe : describe.skip;

live("live service round trip", () => {
  const port = 18650 + Math.floor(Math.random() * 200);
  const base = `http://127.0.0.1:${port}`;
  let service: ChildProcess;

  beforeAll(async () => {
    service = spawn("python3", [
      "-m", "railsecsim.cli", "serve",
      "--scenario", join(repoRoot, "scenarios", "attacks", "parity_live.json"),
      "--port", String(port), "--realtime-factor", "0.5", "--linger", "60",
    ], { cwd: repoRoot, stdio: "ignore" });
    for (let i = 0; i < 300; i++) {
      try {
        const res = await fetch(`${base}/v1/state`);
        if (res.ok) return;
      } catch { /* not up yet */ }
      await new Promise(resolve => setTimeout(resolve, 50));
    }
    throw new Error("soc-service never became reachable");
  });

  afterAll(() => {
    service.kill();
  });

  it("replays the recorded session with schema-valid responses", async () => {
    for (const request of session) {
      if (request.method === "GET" && request.path === "/v1/state") {
        const res = await fetch(`${base}${request.path}`);
        StateView.parse(await res.json());
      } else if (request.method === "GET" && request.path.startsWith("/v1/alerts")) {
        const res = await fetch(`${base}${request.path}`);
        AlertsResponse.parse(await res.json());
      } else if (request.method === "GET" && request.path === "/v1/events/stream") {
        const res = await fetch(`${base}${request.path}`);
        expect(res.headers.get("content-type")).toContain("text/event-stream");
        await res.body?.cancel();
      } else {
        const res = await fetch(`${base}/v1/actions`, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(request.body),
        });
        ActionResult.parse(await res.json());
      }
    }
  });

  it("a quarantine issued in the UI is visible in the map and /v1/state "
     + "within one poll interval", async () => {
    const api = new ApiClient(base);
    const vm = new ViewModel(api);
    await vm.sync();
    expect(vm.connection).toBe("online");

    const action = await vm.dispatchAction("Quarantine", { zone: "Z-FEA" });
    expect(action.status).toBe("accepted");

    // one poll interval later the snapshot and the rendered map agree
    await new Promise(resolve => setTimeout(resolve, 1000));
    await vm.sync();
    expect(vm.zoneQuarantined("Z-FEA")).toBe(true);
    const app = renderApp(document, vm);
    const tile = app.querySelector('[data-zone="Z-FEA"]') as HTMLElement;
    expect(tile.classList.contains("quarantined")).toBe(true);

    const raw = StateView.parse(await (await fetch(`${base}/v1/state`)).json());
    expect(raw.quarantine).toContain("Z-FEA");

    const release = await vm.dispatchAction("Release", { zone: "Z-FEA" });
    expect(release.status).toBe("accepted");
  });
});
