/** HTML rendering for the review screen and the run dashboard.
 *
 * Renderers are pure string producers over the view model so they can be
 * asserted on directly; the browser entry point swaps them into the DOM.
 */

import { paletteState } from "./palette.js";
import type { ReviewController } from "./review.js";
import type { MetricsDoc } from "./types.js";
import { stageTimeline, type ViewModel } from "./viewmodel.js";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderReview(review: ReviewController): string {
  const pending = review.pending;
  if (!pending) {
    const status = review.planReady
      ? `<p class="plan-ready">Plan approved and ready to run.</p>`
      : `<p>No artifact awaiting review.</p>`;
    return `<section class="review">${status}</section>`;
  }
  const parts: string[] = [
    `<section class="review" data-stage="${escapeHtml(pending.stage)}" data-round="${pending.round}">`,
    `<h2>Review: ${escapeHtml(pending.stage)} (round ${pending.round})</h2>`,
  ];
  if (review.subtaskOrder.length > 0) {
    const rows = review.subtaskOrder
      .map(
        (t, i) =>
          `<li data-index="${i}">${escapeHtml(t.skill)} ${escapeHtml(t.part)} &rarr; ` +
          `${escapeHtml(t.target)} <button data-move="up">&uarr;</button>` +
          `<button data-move="down">&darr;</button></li>`,
      )
      .join("");
    parts.push(`<ol class="subtasks">${rows}</ol>`);
  }
  if (pending.payload.tree !== undefined) {
    const body = pending.payload.tree === null
      ? "<em>no valid tree produced</em>"
      : `<pre class="tree">${escapeHtml(JSON.stringify(pending.payload.tree, null, 2))}</pre>`;
    parts.push(`<div class="artifact">${body}</div>`);
  }
  if (pending.diagnostics.length > 0) {
    const items = pending.diagnostics.map((d) => `<li>${escapeHtml(d)}</li>`).join("");
    parts.push(`<ul class="diagnostics">${items}</ul>`);
  }
  parts.push(
    `<form class="decision">`,
    `<textarea name="feedback" placeholder="feedback for one refine round"></textarea>`,
    `<button data-verdict="approve">Approve</button>`,
    `<button data-verdict="feedback">Request changes</button>`,
    `</form></section>`,
  );
  return parts.join("");
}

export function renderDashboard(vm: ViewModel, metrics: MetricsDoc | null = null): string {
  const parts: string[] = [`<section class="dashboard">`];
  if (vm.streamGap) {
    parts.push(`<div class="stream-gap">Event stream gap detected; view may lag.</div>`);
  }
  const timeline = stageTimeline(vm)
    .map(
      (status, i) =>
        `<li class="stage-${status}" data-stage="${i}">` +
        `${escapeHtml(vm.goals[i] ?? `stage ${i}`)}</li>`,
    )
    .join("");
  parts.push(`<ol class="timeline">${timeline}</ol>`);

  const added = new Set(vm.lastChange?.added ?? []);
  const removedRows = (vm.lastChange?.removed ?? [])
    .map((atom) => `<li class="atom removed">${escapeHtml(atom)}</li>`)
    .join("");
  const atomRows = [...vm.atoms]
    .sort()
    .map(
      (atom) =>
        `<li class="atom${added.has(atom) ? " added" : ""}">${escapeHtml(atom)}</li>`,
    )
    .join("");
  parts.push(`<ul class="atoms">${atomRows}${removedRows}</ul>`);

  const actions = [...vm.runningActions.entries()]
    .map(([node, label]) => `<li data-node="${escapeHtml(node)}">${escapeHtml(label)}</li>`)
    .join("");
  parts.push(`<ul class="running">${actions}</ul>`);

  const palette = paletteState(vm);
  const buttons = (["I", "II", "III"] as const)
    .map(
      (kind) =>
        `<button class="disturb" data-kind="${kind}"` +
        `${palette[kind].enabled ? "" : " disabled"}>Disturb ${kind}</button>`,
    )
    .join("");
  parts.push(`<div class="palette">${buttons}</div>`);

  if (vm.finished) {
    const verdict = vm.success ? "success" : "failure";
    parts.push(
      `<p class="run-end ${verdict}">Run finished: ${verdict} (${escapeHtml(vm.endReason)})</p>`,
    );
  }
  if (metrics) {
    const drr = metrics.DRR_applicable ? String(metrics.DRR) : "n/a";
    parts.push(
      `<dl class="metrics"><dt>TS</dt><dd>${metrics.TS}</dd>` +
        `<dt>CR</dt><dd>${metrics.CR}</dd><dt>DRR</dt><dd>${drr}</dd>` +
        `<dt>ticks</dt><dd>${metrics.ticks}</dd>` +
        `<dt>replans</dt><dd>${metrics.replans}</dd></dl>`,
    );
  }
  parts.push(`</section>`);
  return parts.join("");
}
