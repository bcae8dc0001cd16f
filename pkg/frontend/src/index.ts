export { ApiClient, ApiError, type FetchLike } from "./client.js";
export { ConsoleApp, type AppOptions } from "./app.js";
export { paletteState, type PaletteState } from "./palette.js";
export { renderDashboard, renderReview } from "./render.js";
export { ReviewController, type ReviewLogEntry } from "./review.js";
export {
  applyEvent,
  emptyViewModel,
  reduceEvents,
  stageTimeline,
  type StageStatus,
  type ViewModel,
} from "./viewmodel.js";
export * from "./types.js";
