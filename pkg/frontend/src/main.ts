/**
 * Bootstrap: polling snapshot + pushed event stream, one render pass per
 * model change. The base URL is the single configuration setting (query
 * parameter `service`, default same origin).
 */

import { ApiClient } from "./api.js";
import { renderApp } from "./render.js";
import { ViewModel } from "./viewmodel.js";

export const POLL_INTERVAL_MS = 1000;
const OFFLINE_BACKOFF_MS = 5000;

export function serviceBaseUrl(win: Window): string {
  const override = new URLSearchParams(win.location.search).get("service");
  return override ?? win.location.origin;
}

export function start(win: Window): ViewModel {
  const api = new ApiClient(serviceBaseUrl(win));
  const vm = new ViewModel(api);
  const mount = win.document.getElementById("app") ?? win.document.body;

  vm.onChange(() => {
    mount.replaceChildren(renderApp(win.document, vm));
  });

  const loop = async () => {
    await vm.sync();
    const wait = vm.connection === "offline" ? OFFLINE_BACKOFF_MS : POLL_INTERVAL_MS;
    win.setTimeout(loop, wait);
  };
  void loop();

  api.streamEvents(event => vm.pushEvent(event));
  return vm;
}

declare global {
  interface Window {
    __consoleStarted?: boolean;
  }
}

if (typeof window !== "undefined" && !window.__consoleStarted) {
  window.__consoleStarted = true;
  start(window);
}
