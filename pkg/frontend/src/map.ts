/**
 * Schematic topology map: zones as tiles in layers ordered top-to-bottom by
 * Security Level (operational layers first, field layer last), coloured by
 * SL and overlaid with quarantine state. Pure DOM construction from the
 * snapshot; nothing here is invented client-side.
 */

import { StateViewT } from "./schemas.js";

export const SL_COLORS: Record<number, string> = {
  0: "#9e9e9e", 1: "#8d9f87", 2: "#2e7d6b", 3: "#1f4e79", 4: "#5e2b6e",
};

export function zoneLayers(snapshot: StateViewT): StateViewT["zones"][] {
  const ordered = [...snapshot.zones].sort((a, b) =>
    b.sl - a.sl || a.id.localeCompare(b.id));
  const layers = new Map<number, StateViewT["zones"]>();
  for (const zone of ordered) {
    const layer = layers.get(zone.sl) ?? [];
    layer.push(zone);
    layers.set(zone.sl, layer);
  }
  return [...layers.values()];
}

export function renderMap(doc: Document, snapshot: StateViewT,
                          onSelect: (zoneId: string) => void): HTMLElement {
  const root = doc.createElement("div");
  root.className = "topology-map";
  for (const layer of zoneLayers(snapshot)) {
    const row = doc.createElement("div");
    row.className = "zone-layer";
    for (const zone of layer) {
      const tile = doc.createElement("div");
      tile.className = "zone-tile" + (zone.quarantined ? " quarantined" : "");
      tile.dataset.zone = zone.id;
      tile.dataset.sl = String(zone.sl);
      tile.style.backgroundColor = SL_COLORS[zone.sl] ?? "#444";
      tile.addEventListener("click", () => onSelect(zone.id));

      const name = doc.createElement("span");
      name.className = "zone-name";
      name.textContent = zone.id;
      tile.appendChild(name);

      const sl = doc.createElement("span");
      sl.className = "zone-sl";
      sl.textContent = `SL ${zone.sl}`;
      tile.appendChild(sl);

      if (zone.quarantined) {
        const badge = doc.createElement("span");
        badge.className = "quarantine-badge";
        badge.textContent = "QUARANTINED";
        tile.appendChild(badge);
      }
      row.appendChild(tile);
    }
    root.appendChild(row);
  }
  return root;
}
