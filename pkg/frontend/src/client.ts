/** Thin typed client for the session service.
 *
 * The fetch implementation is injected so tests can replay recorded
 * exchanges and browser code can pass `window.fetch`.
 */

import type {
  DisturbanceDoc,
  EventsPage,
  MetricsDoc,
  ReviewDecision,
  ReviewPayload,
  SessionSummary,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

interface ErrorEnvelope {
  error?: { type?: string; message?: string };
}

export class ApiClient {
  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly baseUrl: string = "",
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: Parameters<FetchLike>[1] = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const doc = (await response.json()) as T & ErrorEnvelope;
    if (!response.ok) {
      const err = doc.error ?? {};
      throw new ApiError(response.status, err.type ?? "Unknown", err.message ?? "request failed");
    }
    return doc;
  }

  createSession(payload: {
    transcript: unknown;
    setup: unknown;
    workcell?: unknown;
    config?: { backend?: string; seed?: number; max_rounds?: number };
  }): Promise<{ session_id: string; phase: string }> {
    return this.request("POST", "/sessions", payload);
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  getReview(sessionId: string): Promise<ReviewPayload> {
    return this.request("GET", `/sessions/${sessionId}/review`);
  }

  postReview(
    sessionId: string,
    decision: ReviewDecision,
  ): Promise<{ phase: string; plan_ready?: boolean; round?: number }> {
    return this.request("POST", `/sessions/${sessionId}/review`, decision);
  }

  startRun(
    sessionId: string,
    scenario: unknown,
    mode: "auto" | "stepped" = "auto",
  ): Promise<{ phase: string; mode: string }> {
    return this.request("POST", `/sessions/${sessionId}/run`, { scenario, mode });
  }

  step(sessionId: string, ticks: number): Promise<{ phase: string; ticks: number }> {
    return this.request("POST", `/sessions/${sessionId}/step`, { ticks });
  }

  postDisturbance(sessionId: string, doc: DisturbanceDoc): Promise<{ queued: boolean }> {
    return this.request("POST", `/sessions/${sessionId}/disturbance`, doc);
  }

  getEvents(sessionId: string, since = 0): Promise<EventsPage> {
    return this.request("GET", `/sessions/${sessionId}/events?since=${since}`);
  }

  getMetrics(sessionId: string): Promise<MetricsDoc> {
    return this.request("GET", `/sessions/${sessionId}/metrics`);
  }
}
