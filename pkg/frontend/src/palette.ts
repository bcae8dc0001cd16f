/** Disturbance palette: which injections are currently valid, and the
 * documents the buttons would post.
 *
 * Each button mirrors a service-side invariant so it is disabled whenever a
 * post would be rejected: kind I needs an object of a currently running
 * action with a known pose, kind II an object untouched so far, and kind III
 * an established attachment to break.
 */

import type { DisturbanceDoc } from "./types.js";
import type { ViewModel } from "./viewmodel.js";

const ATTACHMENT_RELATIONS = ["is_inserted_to", "is_placed_on", "is_engaged_with"];
const NUDGE: [number, number] = [14, -9];
const EXTRACT: [number, number] = [16, -10];

export interface PaletteState {
  I: { enabled: boolean; doc: DisturbanceDoc | null };
  II: { enabled: boolean; doc: DisturbanceDoc | null };
  III: { enabled: boolean; doc: DisturbanceDoc | null };
}

function runningObjects(vm: ViewModel): string[] {
  const found = new Set<string>();
  for (const label of vm.runningActions.values()) {
    const open = label.indexOf("(");
    const args = label.slice(open + 1, -1).split(", ").filter(Boolean);
    for (const arg of args) {
      if (vm.objects.includes(arg) && vm.atoms.has(`pose_is_known(${arg})`)) {
        found.add(arg);
      }
    }
  }
  return [...found].sort();
}

function attachments(vm: ViewModel): { part: string; base: string }[] {
  const pairs: { part: string; base: string }[] = [];
  for (const atom of [...vm.atoms].sort()) {
    const match = /^(\w+)\((\w+), (\w+)\)$/.exec(atom);
    if (match && ATTACHMENT_RELATIONS.includes(match[1]!)) {
      pairs.push({ part: match[2]!, base: match[3]! });
    }
  }
  return pairs;
}

function untouchedObjects(vm: ViewModel): string[] {
  const attached = new Set(attachments(vm).flatMap((a) => [a.part, a.base]));
  return vm.objects
    .filter((o) => o !== "gripper" && !vm.involvedObjects.has(o) && !attached.has(o))
    .sort();
}

export function paletteState(vm: ViewModel): PaletteState {
  const state: PaletteState = {
    I: { enabled: false, doc: null },
    II: { enabled: false, doc: null },
    III: { enabled: false, doc: null },
  };
  if (!vm.started || vm.finished) return state;
  const current = runningObjects(vm);
  if (current.length > 0) {
    state.I = {
      enabled: true,
      doc: { kind: "I", payload: { object: current[0]!, displacement: NUDGE } },
    };
  }
  const untouched = untouchedObjects(vm);
  if (untouched.length > 0) {
    state.II = {
      enabled: true,
      doc: { kind: "II", payload: { object: untouched[0]!, displacement: NUDGE } },
    };
  }
  const attached = attachments(vm);
  if (attached.length > 0) {
    const pick = attached[0]!;
    state.III = {
      enabled: true,
      doc: {
        kind: "III",
        payload: { part: pick.part, base: pick.base, displacement: EXTRACT },
      },
    };
  }
  return state;
}
