import { describe, expect, it } from "vitest";

import { RatingClient, SubmitBody } from "../src/client.js";
import { Session } from "../src/session.js";
import { MotionPayload, MotionSummary, StoredResponse } from "../src/types.js";

class FakeService implements RatingClient {
  store = new Map<string, SubmitBody>(); // (participant, motion) -> last body
  posts = 0;
  failNext = false;

  constructor(private ids: string[]) {}

  async listMotions(): Promise<MotionSummary[]> {
    return this.ids.map((id) => ({ id, n_frames: 10, frame_rate: 20 }));
  }

  async fetchMotion(id: string): Promise<MotionPayload> {
    throw new Error(`not needed in this test: ${id}`);
  }

  async submit(body: SubmitBody): Promise<void> {
    this.posts += 1;
    if (this.failNext) {
      this.failNext = false;
      throw new Error("503: unavailable");
    }
    this.store.set(`${body.participant}:${body.motion}`, body);
  }

  async responses(participant: string): Promise<Record<string, StoredResponse>> {
    const out: Record<string, StoredResponse> = {};
    for (const [key, body] of this.store) {
      if (key.startsWith(participant + ":")) {
        out[body.motion] = {
          ease: body.ease,
          frequency: body.frequency,
          seen_before: body.seen_before,
        };
      }
    }
    return out;
  }
}

const IDS = ["m000", "m001", "m002", "m003"];

function answerCurrent(session: Session, ease = 4, freq = 3, seen = true) {
  session.dispatch({ type: "select", field: "ease", value: ease });
  session.dispatch({ type: "select", field: "frequency", value: freq });
  session.dispatch({ type: "select", field: "seenBefore", value: seen });
}

describe("full session", () => {
  it("writes exactly one response per motion", async () => {
    const service = new FakeService(IDS);
    const session = new Session(service, "p1", IDS);
    await session.hydrate();
    while (session.state.status !== "done") {
      answerCurrent(session);
      const ok = await session.submitCurrent();
      expect(ok).toBe(true);
    }
    expect(service.store.size).toBe(IDS.length);
    for (const id of IDS) {
      expect(service.store.has(`p1:${id}`)).toBe(true);
    }
    expect(session.state.status).toBe("done");
  });

  it("incomplete question set never reaches the service", async () => {
    const service = new FakeService(IDS);
    const session = new Session(service, "p1", IDS);
    session.dispatch({ type: "select", field: "ease", value: 2 });
    const ok = await session.submitCurrent();
    expect(ok).toBe(false);
    expect(service.posts).toBe(0);
    expect(session.state.index).toBe(0);
  });

  it("service rejection keeps the motion and surfaces the error", async () => {
    const service = new FakeService(IDS);
    const session = new Session(service, "p1", IDS);
    answerCurrent(session);
    service.failNext = true;
    const ok = await session.submitCurrent();
    expect(ok).toBe(false);
    expect(session.state.index).toBe(0);
    expect(session.state.error).toContain("503");
    // Retry succeeds and advances.
    const retry = await session.submitCurrent();
    expect(retry).toBe(true);
    expect(session.state.index).toBe(1);
  });

  it("refresh mid-session resumes at the first unanswered motion", async () => {
    const service = new FakeService(IDS);
    const first = new Session(service, "p1", IDS);
    await first.hydrate();
    answerCurrent(first, 5, 5, false);
    await first.submitCurrent();
    answerCurrent(first, 2, 1, true);
    await first.submitCurrent();

    const resumed = new Session(service, "p1", IDS);
    await resumed.hydrate();
    expect(resumed.state.index).toBe(2);
    expect(resumed.state.submitted["m000"]).toBe(true);
    expect(resumed.state.selections["m001"]).toEqual({
      ease: 2,
      frequency: 1,
      seenBefore: true,
    });
  });

  it("re-rating a motion overwrites rather than duplicating", async () => {
    const service = new FakeService(IDS);
    const session = new Session(service, "p1", IDS);
    answerCurrent(session, 1, 1, false);
    await session.submitCurrent();
    session.dispatch({ type: "prev" });
    answerCurrent(session, 7, 7, true);
    await session.submitCurrent();
    expect(service.store.get("p1:m000")?.ease).toBe(7);
    expect(service.store.size).toBe(1);
  });
});
