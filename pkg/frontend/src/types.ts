export interface MotionSummary {
  id: string;
  n_frames: number;
  frame_rate: number;
}

export interface ViewDef {
  name: string;
  position: [number, number, number];
  look_at: [number, number, number];
  up: [number, number, number];
}

export interface MotionPayload {
  id: string;
  frame_rate: number;
  n_frames: number;
  joint_names: string[];
  parents: number[];
  frames: number[][][]; // [frame][joint][xyz]
  views: ViewDef[];
}

export interface Selection {
  ease: number | null;
  frequency: number | null;
  seenBefore: boolean | null;
}

export interface StoredResponse {
  ease: number;
  frequency: number;
  seen_before: boolean;
}

export function emptySelection(): Selection {
  return { ease: null, frequency: null, seenBefore: null };
}

export function selectionComplete(s: Selection): boolean {
  return s.ease !== null && s.frequency !== null && s.seenBefore !== null;
}
