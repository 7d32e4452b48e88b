// Session state machine. Buttons and arrow keys both dispatch these actions,
// so the two input paths cannot diverge.

import {
  Selection,
  StoredResponse,
  emptySelection,
  selectionComplete,
} from "./types.js";

export type Status = "rating" | "submitting" | "done";

export interface SessionState {
  motions: string[];
  index: number;
  selections: Record<string, Selection>;
  submitted: Record<string, boolean>;
  status: Status;
  error: string | null;
}

export type Action =
  | { type: "next" }
  | { type: "prev" }
  | { type: "select"; field: "ease" | "frequency" | "seenBefore"; value: number | boolean }
  | { type: "submit" }
  | { type: "submitOk" }
  | { type: "submitError"; message: string }
  | { type: "hydrate"; responses: Record<string, StoredResponse> };

export function initialState(motions: string[]): SessionState {
  const selections: Record<string, Selection> = {};
  for (const m of motions) selections[m] = emptySelection();
  return {
    motions,
    index: 0,
    selections,
    submitted: {},
    status: motions.length ? "rating" : "done",
    error: null,
  };
}

export function currentMotion(state: SessionState): string {
  return state.motions[state.index];
}

export function canSubmit(state: SessionState): boolean {
  return (
    state.status === "rating" && selectionComplete(state.selections[currentMotion(state)])
  );
}

function allSubmitted(state: SessionState): boolean {
  return state.motions.every((m) => state.submitted[m]);
}

function firstUnanswered(state: SessionState): number {
  const i = state.motions.findIndex((m) => !state.submitted[m]);
  return i === -1 ? state.motions.length - 1 : i;
}

export function reduce(state: SessionState, action: Action): SessionState {
  switch (action.type) {
    case "prev": {
      if (state.status !== "rating") return state;
      return { ...state, index: Math.max(state.index - 1, 0), error: null };
    }
    case "next": {
      if (state.status !== "rating") return state;
      // Forward navigation never passes an unanswered question set.
      if (!state.submitted[currentMotion(state)]) return state;
      return {
        ...state,
        index: Math.min(state.index + 1, state.motions.length - 1),
        error: null,
      };
    }
    case "select": {
      if (state.status !== "rating") return state;
      const motion = currentMotion(state);
      const sel = { ...state.selections[motion], [action.field]: action.value };
      return {
        ...state,
        selections: { ...state.selections, [motion]: sel },
        error: null,
      };
    }
    case "submit": {
      if (!canSubmit(state)) return state;
      return { ...state, status: "submitting", error: null };
    }
    case "submitOk": {
      if (state.status !== "submitting") return state;
      const motion = currentMotion(state);
      const submitted = { ...state.submitted, [motion]: true };
      const next = { ...state, submitted, error: null };
      if (state.motions.every((m) => submitted[m])) {
        return { ...next, status: "done" as Status };
      }
      // Advance to the next unanswered motion after acknowledgement.
      let i = state.index;
      while (i < state.motions.length - 1) {
        i += 1;
        if (!submitted[state.motions[i]]) break;
      }
      return { ...next, index: i, status: "rating" as Status };
    }
    case "submitError": {
      if (state.status !== "submitting") return state;
      return { ...state, status: "rating", error: action.message };
    }
    case "hydrate": {
      const selections = { ...state.selections };
      const submitted: Record<string, boolean> = {};
      for (const [motion, r] of Object.entries(action.responses)) {
        if (!(motion in selections)) continue;
        selections[motion] = {
          ease: r.ease,
          frequency: r.frequency,
          seenBefore: r.seen_before,
        };
        submitted[motion] = true;
      }
      const base = { ...state, selections, submitted, error: null };
      if (state.motions.length && state.motions.every((m) => submitted[m])) {
        return { ...base, status: "done" as Status, index: state.motions.length - 1 };
      }
      return { ...base, status: "rating" as Status, index: firstUnanswered(base) };
    }
  }
}

// The single keyboard mapping: arrow keys produce exactly the actions the
// previous/next buttons dispatch.
export function keyToAction(key: string): Action | null {
  if (key === "ArrowLeft") return { type: "prev" };
  if (key === "ArrowRight") return { type: "next" };
  return null;
}

export function buttonAction(name: "prev" | "next"): Action {
  return { type: name };
}
