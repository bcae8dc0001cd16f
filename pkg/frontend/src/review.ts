/** Review screen state: one pending artifact at a time, with approve and
 * feedback actions and a local, editable ordering of interpreted subtasks.
 */

import type { ApiClient } from "./client.js";
import type { ReviewPayload, SubtaskDoc } from "./types.js";

export interface ReviewLogEntry {
  stage: string;
  round: number;
  verdict: "approve" | "feedback";
  feedback: string;
}

export class ReviewController {
  pending: ReviewPayload | null = null;
  subtaskOrder: SubtaskDoc[] = [];
  log: ReviewLogEntry[] = [];
  planReady = false;
  phase = "planning";

  constructor(
    private readonly client: ApiClient,
    readonly sessionId: string,
  ) {}

  /** Fetch the artifact under review and reset the editable ordering. */
  async load(): Promise<ReviewPayload> {
    this.pending = await this.client.getReview(this.sessionId);
    this.subtaskOrder = [...(this.pending.payload.subtasks ?? [])];
    return this.pending;
  }

  /** Move a subtask within the locally edited ordering. */
  moveSubtask(index: number, delta: number): void {
    const target = index + delta;
    if (index < 0 || target < 0) return;
    if (index >= this.subtaskOrder.length || target >= this.subtaskOrder.length) return;
    const held = this.subtaskOrder[index]!;
    this.subtaskOrder[index] = this.subtaskOrder[target]!;
    this.subtaskOrder[target] = held;
  }

  /** True when the reviewer reordered the displayed subtasks. */
  orderEdited(): boolean {
    const original = this.pending?.payload.subtasks ?? [];
    if (original.length !== this.subtaskOrder.length) return true;
    return original.some((t, i) => JSON.stringify(t) !== JSON.stringify(this.subtaskOrder[i]));
  }

  async approve(): Promise<void> {
    if (!this.pending) throw new Error("no artifact loaded");
    this.log.push({
      stage: this.pending.stage,
      round: this.pending.round,
      verdict: "approve",
      feedback: "",
    });
    const reply = await this.client.postReview(this.sessionId, { verdict: "approve" });
    this.phase = reply.phase;
    this.planReady = Boolean(reply.plan_ready);
    this.pending = null;
    if (this.phase === "awaiting_review") await this.load();
  }

  /** Send feedback; an edited ordering is appended so one refine round can
   * act on it. The refined artifact is re-presented for another look. */
  async submitFeedback(text: string): Promise<ReviewPayload> {
    if (!this.pending) throw new Error("no artifact loaded");
    let feedback = text;
    if (this.orderEdited()) {
      const order = this.subtaskOrder
        .map((t) => `${t.skill} ${t.part} -> ${t.target}`)
        .join("; ");
      feedback = `${text} [requested order: ${order}]`;
    }
    this.log.push({
      stage: this.pending.stage,
      round: this.pending.round,
      verdict: "feedback",
      feedback,
    });
    await this.client.postReview(this.sessionId, { verdict: "feedback", feedback });
    return this.load();
  }
}
