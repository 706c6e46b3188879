// Pure view-state logic for the guessing screen. The server is the source
// of truth; this module only decides what the controls may do.

import type { SceneView } from "./api.js";

export type Assignments = Record<string, string>;

export type ViewState = {
  scene: SceneView;
  assignments: Assignments;
  submitted: boolean;
  needsHistory: boolean;
};

export function newViewState(scene: SceneView): ViewState {
  return { scene, assignments: {}, submitted: false, needsHistory: false };
}

export function assign(state: ViewState, slot: string, name: string): ViewState {
  if (!state.scene.slots.includes(slot)) {
    return state;
  }
  const assignments = { ...state.assignments };
  if (name === "") {
    delete assignments[slot];
  } else {
    assignments[slot] = name;
  }
  return { ...state, assignments };
}

export function duplicateNames(state: ViewState): string[] {
  const seen = new Map<string, number>();
  for (const name of Object.values(state.assignments)) {
    seen.set(name, (seen.get(name) ?? 0) + 1);
  }
  return [...seen.entries()].filter(([, n]) => n > 1).map(([name]) => name);
}

export function validationError(state: ViewState): string | null {
  for (const [slot, name] of Object.entries(state.assignments)) {
    if (!state.scene.candidates.includes(name)) {
      return `${name} is not a candidate for ${slot}`;
    }
  }
  const dupes = duplicateNames(state);
  if (dupes.length > 0) {
    return `each candidate can be used once (${dupes.join(", ")})`;
  }
  return null;
}

export function isComplete(state: ViewState): boolean {
  return state.scene.slots.every((slot) => state.assignments[slot] !== undefined);
}

// Submit is enabled only when every P-ID has an assignment, the mapping is
// an injection into the candidates, and nothing was submitted yet.
export function canSubmit(state: ViewState): boolean {
  return !state.submitted && isComplete(state) && validationError(state) === null;
}

export function slotColorClass(slot: string): string {
  const n = Number(slot.replace(/\D/g, "")) % 5;
  return `pid pid-${n}`;
}
