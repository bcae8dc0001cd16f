/** Wire types for the session service and its event stream. */

export interface ActionRef {
  name: string;
  args: string[];
}

export interface BaseEvent {
  type: string;
  t: number;
  seq: number;
}

export interface RunStartEvent extends BaseEvent {
  type: "run_start";
  stages: number;
  goals: string[];
  objects: string[];
  atoms: { P: string[]; R: string[] };
}

export interface TickEvent extends BaseEvent {
  type: "tick";
  stage: number;
  status: string;
  visited: [string, string][];
}

export interface StateUpdateEvent extends BaseEvent {
  type: "state_update";
  added_p: string[];
  added_r: string[];
  removed_p: string[];
  removed_r: string[];
  positions_updated: string[];
}

export interface BeliefUpdateEvent extends BaseEvent {
  type: "belief_update";
  added: string[];
  removed: string[];
}

export interface ActionEvent extends BaseEvent {
  type: "action_start" | "action_complete" | "action_suspend" | "action_resume";
  action: ActionRef;
  node: string;
  tick: number;
}

export interface StageCompleteEvent extends BaseEvent {
  type: "stage_complete";
  stage: number;
  goal: string;
}

export interface DisturbanceEvent extends BaseEvent {
  type: "disturbance" | "disturbance_applied";
  kind: string;
  payload: Record<string, unknown>;
}

export interface RollbackEvent extends BaseEvent {
  type: "rollback";
  from: number;
  to: number;
}

export interface ReplanEvent extends BaseEvent {
  type: "replan";
  stage: number;
}

export interface SelfRecoveryEvent extends BaseEvent {
  type: "self_recovery";
  atom: string;
  action: ActionRef;
  node: string;
}

export interface RunEndEvent extends BaseEvent {
  type: "run_end";
  ts: boolean;
  reason: string;
}

export type SessionEvent =
  | RunStartEvent
  | TickEvent
  | StateUpdateEvent
  | BeliefUpdateEvent
  | ActionEvent
  | StageCompleteEvent
  | DisturbanceEvent
  | RollbackEvent
  | ReplanEvent
  | SelfRecoveryEvent
  | RunEndEvent
  | BaseEvent;

export interface SubtaskDoc {
  skill: string;
  part: string;
  target: string;
}

export interface ReviewPayload {
  stage: string;
  payload: {
    subtasks?: SubtaskDoc[];
    subtask?: SubtaskDoc;
    tree?: unknown;
  };
  diagnostics: string[];
  round: number;
}

export interface ReviewDecision {
  verdict: "approve" | "feedback";
  feedback?: string;
}

export interface SessionSummary {
  session_id: string;
  phase: string;
  plan_ready: boolean;
  review_log: { stage: string; round: number; verdict: string; feedback: string }[];
  n_events: number;
  goals?: string[];
}

export interface MetricsDoc {
  TS: boolean;
  CR: number;
  DRR: number | null;
  DRR_applicable: boolean;
  ticks: number;
  replans: number;
}

export interface EventsPage {
  events: SessionEvent[];
  next: number;
  phase: string;
}

export interface DisturbanceDoc {
  kind: "I" | "II" | "III";
  trigger?: Record<string, unknown>;
  payload: Record<string, unknown>;
}
