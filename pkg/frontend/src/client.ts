// Thin API client for the rating service. The UI talks only to these
// endpoints; no direct file access.

import { MotionPayload, MotionSummary, StoredResponse } from "./types.js";

export interface SubmitBody {
  participant: string;
  motion: string;
  ease: number;
  frequency: number;
  seen_before: boolean;
}

export interface RatingClient {
  listMotions(): Promise<MotionSummary[]>;
  fetchMotion(id: string): Promise<MotionPayload>;
  submit(body: SubmitBody): Promise<void>;
  responses(participant: string): Promise<Record<string, StoredResponse>>;
}

export class HttpClient implements RatingClient {
  constructor(private base: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const r = await fetch(this.base + path, init);
    if (!r.ok) {
      let detail = r.statusText;
      try {
        detail = (await r.json()).detail ?? detail;
      } catch {
        /* keep statusText */
      }
      throw new Error(`${r.status}: ${detail}`);
    }
    return (await r.json()) as T;
  }

  async listMotions(): Promise<MotionSummary[]> {
    const out = await this.json<{ motions: MotionSummary[] }>("/api/motions");
    return out.motions;
  }

  fetchMotion(id: string): Promise<MotionPayload> {
    return this.json<MotionPayload>(`/api/motions/${encodeURIComponent(id)}`);
  }

  async submit(body: SubmitBody): Promise<void> {
    await this.json("/api/responses", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async responses(participant: string): Promise<Record<string, StoredResponse>> {
    const out = await this.json<{ responses: Record<string, StoredResponse> }>(
      `/api/responses/${encodeURIComponent(participant)}`,
    );
    return out.responses;
  }
}
