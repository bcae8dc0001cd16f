/** Pure reduction of the session event stream into a dashboard view model.
 *
 * Everything displayed is a function of the event history alone: the console
 * never simulates outcomes, it only folds events the service has emitted.
 */

import type {
  ActionEvent,
  BeliefUpdateEvent,
  DisturbanceEvent,
  RollbackEvent,
  RunEndEvent,
  RunStartEvent,
  SelfRecoveryEvent,
  SessionEvent,
  StageCompleteEvent,
  StateUpdateEvent,
  TickEvent,
} from "./types.js";

export type StageStatus = "pending" | "active" | "done";

export interface AtomChange {
  seq: number;
  added: string[];
  removed: string[];
}

export interface RecoveryNote {
  seq: number;
  atom: string;
  action: string;
}

export interface DisturbanceNote {
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
}

export interface ViewModel {
  started: boolean;
  stages: number;
  goals: string[];
  objects: string[];
  currentStage: number;
  completedStages: Set<number>;
  atoms: Set<string>;
  lastChange: AtomChange | null;
  nodeStatuses: Map<string, string>;
  runningActions: Map<string, string>;
  involvedObjects: Set<string>;
  disturbances: DisturbanceNote[];
  recoveries: RecoveryNote[];
  rollbacks: { seq: number; from: number; to: number }[];
  replans: number;
  tick: number;
  lastSeq: number;
  streamGap: boolean;
  finished: boolean;
  success: boolean | null;
  endReason: string;
}

export function emptyViewModel(): ViewModel {
  return {
    started: false,
    stages: 0,
    goals: [],
    objects: [],
    currentStage: 0,
    completedStages: new Set(),
    atoms: new Set(),
    lastChange: null,
    nodeStatuses: new Map(),
    runningActions: new Map(),
    involvedObjects: new Set(),
    disturbances: [],
    recoveries: [],
    rollbacks: [],
    replans: 0,
    tick: 0,
    lastSeq: -1,
    streamGap: false,
    finished: false,
    success: null,
    endReason: "",
  };
}

function noteChange(vm: ViewModel, seq: number, added: string[], removed: string[]): void {
  for (const atom of removed) vm.atoms.delete(atom);
  for (const atom of added) vm.atoms.add(atom);
  if (added.length || removed.length) {
    vm.lastChange = { seq, added: [...added], removed: [...removed] };
  }
}

/** Fold one event into the model, mutating and returning it. */
export function applyEvent(vm: ViewModel, event: SessionEvent): ViewModel {
  if (event.seq !== vm.lastSeq + 1) vm.streamGap = true;
  vm.lastSeq = event.seq;
  vm.tick = event.t;
  switch (event.type) {
    case "run_start": {
      const e = event as RunStartEvent;
      vm.started = true;
      vm.stages = e.stages;
      vm.goals = [...e.goals];
      vm.objects = [...e.objects];
      vm.atoms = new Set([...e.atoms.P, ...e.atoms.R]);
      break;
    }
    case "tick": {
      const e = event as TickEvent;
      vm.currentStage = e.stage;
      vm.nodeStatuses = new Map(e.visited);
      break;
    }
    case "state_update": {
      const e = event as StateUpdateEvent;
      noteChange(vm, e.seq, [...e.added_p, ...e.added_r], [...e.removed_p, ...e.removed_r]);
      break;
    }
    case "belief_update": {
      const e = event as BeliefUpdateEvent;
      noteChange(vm, e.seq, e.added, e.removed);
      break;
    }
    case "action_start":
    case "action_resume": {
      const e = event as ActionEvent;
      vm.runningActions.set(e.node, `${e.action.name}(${e.action.args.join(", ")})`);
      for (const arg of e.action.args) {
        if (vm.objects.includes(arg)) vm.involvedObjects.add(arg);
      }
      break;
    }
    case "action_complete":
    case "action_suspend": {
      const e = event as ActionEvent;
      vm.runningActions.delete(e.node);
      break;
    }
    case "stage_complete": {
      const e = event as StageCompleteEvent;
      vm.completedStages.add(e.stage);
      break;
    }
    case "rollback": {
      const e = event as RollbackEvent;
      // Rewind: subgoals at or above the rollback target are in doubt again.
      for (const stage of [...vm.completedStages]) {
        if (stage >= e.to) vm.completedStages.delete(stage);
      }
      vm.currentStage = e.to;
      vm.rollbacks.push({ seq: e.seq, from: e.from, to: e.to });
      break;
    }
    case "replan":
      vm.replans += 1;
      break;
    case "disturbance":
    case "disturbance_applied": {
      const e = event as DisturbanceEvent;
      if (e.type === "disturbance") {
        vm.disturbances.push({ seq: e.seq, kind: e.kind, payload: e.payload });
      }
      break;
    }
    case "self_recovery": {
      const e = event as SelfRecoveryEvent;
      vm.recoveries.push({
        seq: e.seq,
        atom: e.atom,
        action: `${e.action.name}(${e.action.args.join(", ")})`,
      });
      break;
    }
    case "run_end": {
      const e = event as RunEndEvent;
      vm.finished = true;
      vm.success = e.ts;
      vm.endReason = e.reason;
      vm.runningActions.clear();
      break;
    }
    default:
      break;
  }
  return vm;
}

export function reduceEvents(events: SessionEvent[], vm?: ViewModel): ViewModel {
  const model = vm ?? emptyViewModel();
  for (const event of events) applyEvent(model, event);
  return model;
}

/** Stage timeline derived from the fold: done, active, or pending. */
export function stageTimeline(vm: ViewModel): StageStatus[] {
  const timeline: StageStatus[] = [];
  for (let i = 0; i < vm.stages; i += 1) {
    if (vm.completedStages.has(i)) timeline.push("done");
    else if (i === vm.currentStage && !vm.finished) timeline.push("active");
    else timeline.push("pending");
  }
  return timeline;
}
