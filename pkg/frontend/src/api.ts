/**
 * Thin client for the soc-service endpoints. Every response is schema
 * checked; a recorder hook captures outgoing requests so a session can be
 * replayed by the API-contract test.
 */

import {
  ActionRequest, ActionRequestT, ActionResult, ActionResultT,
  AlertsResponse, SecurityEventT, SecurityEventView, StateView, StateViewT,
} from "./schemas.js";

export interface RecordedRequest {
  method: string;
  path: string;
  body?: unknown;
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiClient {
  readonly baseUrl: string;
  private fetchImpl: FetchLike;
  recorder: ((req: RecordedRequest) => void) | null = null;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private record(req: RecordedRequest): void {
    if (this.recorder) this.recorder(req);
  }

  async state(): Promise<StateViewT> {
    this.record({ method: "GET", path: "/v1/state" });
    const res = await this.fetchImpl(`${this.baseUrl}/v1/state`);
    return StateView.parse(await res.json());
  }

  async alertsSince(since: number, timeoutS = 20): Promise<{ alerts: StateViewT["alerts"]; latest: number }> {
    const path = `/v1/alerts?since=${since}&timeout_s=${timeoutS}`;
    this.record({ method: "GET", path });
    const res = await this.fetchImpl(`${this.baseUrl}${path}`);
    return AlertsResponse.parse(await res.json());
  }

  async submitAction(request: ActionRequestT): Promise<ActionResultT> {
    const body = ActionRequest.parse(request);
    this.record({ method: "POST", path: "/v1/actions", body });
    const res = await this.fetchImpl(`${this.baseUrl}/v1/actions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return ActionResult.parse(await res.json());
  }

  /** SSE subscription; returns an unsubscribe function. Injectable for tests. */
  streamEvents(onEvent: (event: SecurityEventT) => void,
               makeSource?: (url: string) => EventSource): () => void {
    const url = `${this.baseUrl}/v1/events/stream`;
    this.record({ method: "GET", path: "/v1/events/stream" });
    const factory = makeSource ?? ((u: string) => new EventSource(u));
    const source = factory(url);
    source.onmessage = (msg: MessageEvent) => {
      try {
        onEvent(SecurityEventView.parse(JSON.parse(msg.data as string)));
      } catch {
        // malformed push frames are dropped; polling remains authoritative
      }
    };
    return () => source.close();
  }
}
