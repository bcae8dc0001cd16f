/** Unit coverage for the event fold, the palette invariants, and rendering. */

import { describe, expect, it } from "vitest";
import { paletteState } from "../src/palette.js";
import { renderDashboard, renderReview } from "../src/render.js";
import { ReviewController } from "../src/review.js";
import type { ApiClient } from "../src/client.js";
import type { ReviewPayload, SessionEvent } from "../src/types.js";
import { applyEvent, emptyViewModel, reduceEvents, stageTimeline } from "../src/viewmodel.js";

function runStart(objects: string[], p: string[], r: string[], stages = 2): SessionEvent {
  return {
    type: "run_start",
    t: 0,
    seq: 0,
    stages,
    goals: Array.from({ length: stages }, (_, i) => `goal${i}`),
    objects,
    atoms: { P: p, R: r },
  } as SessionEvent;
}

function actionStart(seq: number, name: string, args: string[], node = "n1"): SessionEvent {
  return { type: "action_start", t: seq, seq, action: { name, args }, node, tick: seq } as SessionEvent;
}

describe("view model fold", () => {
  it("tracks node statuses from the latest tick only", () => {
    const vm = reduceEvents([
      runStart(["a"], [], []),
      { type: "tick", t: 1, seq: 1, stage: 0, status: "running", visited: [["x", "running"]] } as SessionEvent,
      { type: "tick", t: 2, seq: 2, stage: 0, status: "running", visited: [["y", "success"]] } as SessionEvent,
    ]);
    expect(vm.nodeStatuses.get("y")).toBe("success");
    expect(vm.nodeStatuses.has("x")).toBe(false);
    expect(vm.currentStage).toBe(0);
  });

  it("marks stages done and active across completions", () => {
    const vm = reduceEvents([
      runStart(["a"], [], [], 3),
      { type: "stage_complete", t: 5, seq: 1, stage: 0, goal: "g" } as SessionEvent,
      { type: "tick", t: 6, seq: 2, stage: 1, status: "running", visited: [] } as SessionEvent,
    ]);
    expect(stageTimeline(vm)).toEqual(["done", "active", "pending"]);
  });

  it("clears running actions and closes the run on run_end", () => {
    const vm = reduceEvents([
      runStart(["a"], [], []),
      actionStart(1, "pick_up", ["gripper", "a"]),
      { type: "run_end", t: 9, seq: 2, ts: false, reason: "replan bound" } as SessionEvent,
    ]);
    expect(vm.runningActions.size).toBe(0);
    expect(vm.finished).toBe(true);
    expect(vm.success).toBe(false);
    expect(stageTimeline(vm)).toEqual(["pending", "pending"]);
    expect(renderDashboard(vm)).toContain("Run finished: failure");
  });
});

describe("disturbance palette", () => {
  it("enables kind I only while a running action touches a pose-known object", () => {
    const vm = reduceEvents([runStart(["gear", "shaft"], ["pose_is_known(gear)"], [])]);
    expect(paletteState(vm).I.enabled).toBe(false);

    applyEvent(vm, actionStart(1, "pick_up", ["gripper", "gear"]));
    const enabled = paletteState(vm);
    expect(enabled.I.enabled).toBe(true);
    expect(enabled.I.doc).toEqual({
      kind: "I",
      payload: { object: "gear", displacement: [14, -9] },
    });

    applyEvent(vm, {
      type: "action_complete", t: 2, seq: 2,
      action: { name: "pick_up", args: ["gripper", "gear"] }, node: "n1", tick: 2,
    } as SessionEvent);
    expect(paletteState(vm).I.enabled).toBe(false);
  });

  it("disables kind II once every candidate object has been involved", () => {
    const vm = reduceEvents([runStart(["gear", "shaft", "gripper"], [], [])]);
    expect(paletteState(vm).II.enabled).toBe(true);

    applyEvent(vm, actionStart(1, "pick_up", ["gripper", "gear"], "n1"));
    applyEvent(vm, actionStart(2, "retrieve_pose", ["shaft"], "n2"));
    const palette = paletteState(vm);
    expect(palette.II.enabled).toBe(false);
    expect(palette.II.doc).toBeNull();
  });

  it("enables kind III only when an attachment exists, naming the pair", () => {
    const vm = reduceEvents([runStart(["gear", "shaft"], [], [])]);
    expect(paletteState(vm).III.enabled).toBe(false);

    applyEvent(vm, {
      type: "belief_update", t: 1, seq: 1,
      added: ["is_inserted_to(gear, shaft)"], removed: [],
    } as SessionEvent);
    const palette = paletteState(vm);
    expect(palette.III.enabled).toBe(true);
    expect(palette.III.doc).toEqual({
      kind: "III",
      payload: { part: "gear", base: "shaft", displacement: [16, -10] },
    });
  });

  it("disables every button before the run starts and after it ends", () => {
    const idle = emptyViewModel();
    const state = paletteState(idle);
    expect(state.I.enabled || state.II.enabled || state.III.enabled).toBe(false);

    const vm = reduceEvents([
      runStart(["gear"], [], ["is_placed_on(gear, base)"]),
      { type: "run_end", t: 3, seq: 1, ts: true, reason: "done" } as SessionEvent,
    ]);
    expect(paletteState(vm).III.enabled).toBe(false);
  });

  it("renders disabled attributes for unavailable buttons", () => {
    const vm = reduceEvents([runStart(["gear"], [], [])]);
    const html = renderDashboard(vm);
    expect(html).toContain(`data-kind="I" disabled`);
    expect(html).toContain(`data-kind="III" disabled`);
    expect(html).not.toContain(`data-kind="II" disabled`);
  });
});

describe("review screen", () => {
  const payload: ReviewPayload = {
    stage: "interpretation",
    round: 0,
    diagnostics: [],
    payload: {
      subtasks: [
        { skill: "insert", part: "gear1", target: "shaft1" },
        { skill: "place", part: "shaft2", target: "base" },
      ],
    },
  };

  function stubClient(log: unknown[]): ApiClient {
    return {
      getReview: async () => JSON.parse(JSON.stringify(payload)),
      postReview: async (_sid: string, decision: unknown) => {
        log.push(decision);
        return { phase: "planning", plan_ready: false };
      },
    } as unknown as ApiClient;
  }

  it("lets the reviewer reorder subtasks and embeds the order in feedback", async () => {
    const posted: unknown[] = [];
    const review = new ReviewController(stubClient(posted), "s1");
    await review.load();
    expect(review.orderEdited()).toBe(false);

    review.moveSubtask(1, -1);
    expect(review.subtaskOrder[0]!.part).toBe("shaft2");
    expect(review.orderEdited()).toBe(true);

    await review.submitFeedback("start with the shaft");
    const decision = posted[0] as { verdict: string; feedback: string };
    expect(decision.verdict).toBe("feedback");
    expect(decision.feedback).toContain("start with the shaft");
    expect(decision.feedback).toContain("place shaft2 -> base; insert gear1 -> shaft1");
  });

  it("renders the pending artifact with decision controls", async () => {
    const review = new ReviewController(stubClient([]), "s1");
    await review.load();
    const html = renderReview(review);
    expect(html).toContain("Review: interpretation (round 0)");
    expect(html).toContain("insert gear1 &rarr; shaft1");
    expect(html).toContain(`data-verdict="approve"`);
    expect(html).toContain(`data-verdict="feedback"`);
  });
});
