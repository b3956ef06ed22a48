/** DOM bindings for the feed, status tables, action controls, and banners. */

import { renderMap } from "./map.js";
import { ViewModel } from "./viewmodel.js";

function el(doc: Document, tag: string, className: string, text?: string): HTMLElement {
  const node = doc.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderBanner(doc: Document, vm: ViewModel): HTMLElement {
  const banner = el(doc, "div", `banner banner-${vm.connection}`);
  if (vm.connection === "offline") {
    banner.textContent = "OFFLINE - service unreachable, retrying";
  } else if (vm.connection === "stale") {
    banner.textContent = `stale data (${vm.missedPolls} missed polls)`;
  } else if (vm.connection === "connecting") {
    banner.textContent = "connecting";
  } else {
    const t = vm.snapshot?.sim_time ?? 0;
    banner.textContent = `online - sim time ${t} ms`
      + (vm.snapshot?.finished ? " (run finished)" : "");
  }
  return banner;
}

export function renderAlertFeed(doc: Document, vm: ViewModel): HTMLElement {
  const feed = el(doc, "div", "alert-feed");
  const alerts = vm.snapshot?.alerts ?? [];
  for (const alert of [...alerts].reverse()) {
    const row = el(doc, "div", `alert alert-${alert.severity} alert-${alert.state}`);
    row.dataset.alertId = String(alert.id);
    row.appendChild(el(doc, "span", "alert-rule", alert.rule_id));
    row.appendChild(el(doc, "span", "alert-time", `t=${alert.last_time}`));
    row.appendChild(el(doc, "span", "alert-state", alert.state));
    if (alert.incident === "known" && alert.recommended) {
      row.appendChild(el(doc, "span", "alert-actions",
        `known: ${alert.recommended.join(", ")}`));
    } else if (alert.incident === "unknown") {
      row.appendChild(el(doc, "span", "alert-actions", "unknown - forensics open"));
    }
    feed.appendChild(row);
  }
  return feed;
}

export function renderRouteTable(doc: Document, vm: ViewModel): HTMLElement {
  const table = el(doc, "div", "route-table");
  const snapshot = vm.snapshot;
  if (!snapshot) return table;
  for (const [route, phase] of Object.entries(snapshot.routes)) {
    const row = el(doc, "div", `route route-${phase}`);
    row.dataset.route = route;
    row.textContent = `${route}: ${phase}`;
    table.appendChild(row);
  }
  for (const [signal, aspect] of Object.entries(snapshot.signals)) {
    const row = el(doc, "div", `signal signal-${aspect}`);
    row.dataset.signal = signal;
    row.textContent = `${signal}: ${aspect}`;
    table.appendChild(row);
  }
  for (const [point, position] of Object.entries(snapshot.points)) {
    const row = el(doc, "div", `point point-${position}`);
    row.dataset.point = point;
    row.textContent = `${point}: ${position}`;
    table.appendChild(row);
  }
  return table;
}

export function renderPendingActions(doc: Document, vm: ViewModel): HTMLElement {
  const list = el(doc, "div", "pending-actions");
  for (const action of [...vm.pending].reverse().slice(0, 20)) {
    const row = el(doc, "div", `action action-${action.status}`);
    row.dataset.actionId = String(action.id);
    let label = `${action.kind} ${JSON.stringify(action.params)}: ${action.status}`;
    if (action.status === "rejected" && action.reason) {
      label += ` (${action.reason})`;
    }
    row.textContent = label;
    list.appendChild(row);
  }
  return list;
}

export function renderEventFeed(doc: Document, vm: ViewModel): HTMLElement {
  const feed = el(doc, "div", "event-feed");
  for (const event of [...vm.events].reverse().slice(0, 50)) {
    const row = el(doc, "div", `event event-${event.severity}`);
    row.textContent = `[${event.time}] ${event.category} @ ${event.source}`;
    feed.appendChild(row);
  }
  return feed;
}

export function renderControls(doc: Document, vm: ViewModel): HTMLElement {
  const controls = el(doc, "div", "controls");
  const zone = vm.selectedZone;
  if (zone !== null) {
    const label = vm.zoneQuarantined(zone) ? "Release" : "Quarantine";
    const button = el(doc, "button", "zone-action-button", `${label} ${zone}`) as HTMLButtonElement;
    button.dataset.zone = zone;
    button.addEventListener("click", () => {
      void vm.dispatchAction(label, { zone });
    });
    controls.appendChild(button);
  }
  for (const [patchId] of Object.entries(vm.snapshot?.patches ?? {})) {
    const apply = el(doc, "button", "patch-apply-button",
      `Apply ${patchId}`) as HTMLButtonElement;
    apply.disabled = !vm.canApplyPatch(patchId);
    apply.dataset.patch = patchId;
    apply.addEventListener("click", () => {
      void vm.dispatchAction("ApplyPatch", { patch_id: patchId });
    });
    controls.appendChild(apply);
  }
  return controls;
}

export function renderApp(doc: Document, vm: ViewModel): HTMLElement {
  const app = el(doc, "div", "console-app");
  app.appendChild(renderBanner(doc, vm));
  if (vm.snapshot) {
    app.appendChild(renderMap(doc, vm.snapshot, id => vm.selectZone(id)));
    app.appendChild(renderRouteTable(doc, vm));
    app.appendChild(renderAlertFeed(doc, vm));
  }
  app.appendChild(renderControls(doc, vm));
  app.appendChild(renderPendingActions(doc, vm));
  app.appendChild(renderEventFeed(doc, vm));
  return app;
}
