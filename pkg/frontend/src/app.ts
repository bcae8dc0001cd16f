/** Browser entry point: wires the review screen and run dashboard to a live
 * session over the HTTP API, polling the event cursor for updates.
 */

import { ApiClient } from "./client.js";
import { paletteState } from "./palette.js";
import { renderDashboard, renderReview } from "./render.js";
import { ReviewController } from "./review.js";
import type { MetricsDoc } from "./types.js";
import { emptyViewModel, reduceEvents, type ViewModel } from "./viewmodel.js";

export interface AppOptions {
  baseUrl?: string;
  pollMs?: number;
  transcript: unknown;
  setup: unknown;
  scenario?: unknown;
}

export class ConsoleApp {
  readonly client: ApiClient;
  review: ReviewController | null = null;
  vm: ViewModel = emptyViewModel();
  metrics: MetricsDoc | null = null;
  sessionId = "";
  private cursor = 0;

  constructor(
    private readonly root: { innerHTML: string },
    fetchImpl: typeof fetch,
    private readonly options: AppOptions,
  ) {
    this.client = new ApiClient(
      (url, init) => fetchImpl(url, init),
      options.baseUrl ?? "",
    );
  }

  async start(): Promise<void> {
    const created = await this.client.createSession({
      transcript: this.options.transcript,
      setup: this.options.setup,
    });
    this.sessionId = created.session_id;
    this.review = new ReviewController(this.client, this.sessionId);
    await this.review.load();
    this.paint();
  }

  async beginRun(mode: "auto" | "stepped" = "stepped"): Promise<void> {
    await this.client.startRun(this.sessionId, this.options.scenario ?? {}, mode);
    this.vm = emptyViewModel();
    this.cursor = 0;
  }

  /** Advance a stepped run and fold new events into the view. */
  async advance(ticks: number): Promise<void> {
    const stepped = await this.client.step(this.sessionId, ticks);
    const page = await this.client.getEvents(this.sessionId, this.cursor);
    this.cursor = page.next;
    reduceEvents(page.events, this.vm);
    if (stepped.phase === "finished") {
      this.metrics = await this.client.getMetrics(this.sessionId);
    }
    this.paint();
  }

  /** Press one of the palette buttons, if its invariant currently holds. */
  async pressDisturb(kind: "I" | "II" | "III"): Promise<boolean> {
    const option = paletteState(this.vm)[kind];
    if (!option.enabled || option.doc === null) return false;
    await this.client.postDisturbance(this.sessionId, option.doc);
    return true;
  }

  paint(): void {
    const reviewHtml = this.review ? renderReview(this.review) : "";
    this.root.innerHTML = reviewHtml + renderDashboard(this.vm, this.metrics);
  }
}
