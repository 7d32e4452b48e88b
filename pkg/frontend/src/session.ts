// Session controller: owns the state machine, drives the client, and keeps
// submission effects serialized. Rendering subscribes to state changes.

import { RatingClient } from "./client.js";
import {
  Action,
  SessionState,
  canSubmit,
  currentMotion,
  initialState,
  reduce,
} from "./state.js";

export class Session {
  state: SessionState;
  private listeners: ((s: SessionState) => void)[] = [];

  constructor(
    private client: RatingClient,
    private participant: string,
    motionIds: string[],
  ) {
    this.state = initialState(motionIds);
  }

  onChange(fn: (s: SessionState) => void) {
    this.listeners.push(fn);
  }

  private set(next: SessionState) {
    if (next !== this.state) {
      this.state = next;
      for (const fn of this.listeners) fn(next);
    }
  }

  dispatch(action: Action) {
    this.set(reduce(this.state, action));
  }

  /** Resume from the service: prefills answered motions, jumps to the first
   * unanswered one. */
  async hydrate() {
    const responses = await this.client.responses(this.participant);
    this.dispatch({ type: "hydrate", responses });
  }

  /** Submit the current selection; advances only on acknowledgement. */
  async submitCurrent(): Promise<boolean> {
    if (!canSubmit(this.state)) return false;
    const motion = currentMotion(this.state);
    const sel = this.state.selections[motion];
    this.dispatch({ type: "submit" });
    try {
      await this.client.submit({
        participant: this.participant,
        motion,
        ease: sel.ease as number,
        frequency: sel.frequency as number,
        seen_before: sel.seenBefore as boolean,
      });
      this.dispatch({ type: "submitOk" });
      return true;
    } catch (err) {
      this.dispatch({
        type: "submitError",
        message: err instanceof Error ? err.message : String(err),
      });
      return false;
    }
  }
}
