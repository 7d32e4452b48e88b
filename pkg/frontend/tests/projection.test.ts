import { describe, expect, it } from "vitest";

import { motionRadius, projectAllViews, projectSkeleton } from "../src/projection.js";
import { MotionPayload, ViewDef } from "../src/types.js";

const VIEWS: ViewDef[] = [
  { name: "oblique", position: [1.9, 2.7, 1.9], look_at: [0, 0.8, 0], up: [0, 1, 0] },
  { name: "top", position: [0, 3.6, 0], look_at: [0, 0.8, 0], up: [0, 0, 1] },
  { name: "side", position: [2.8, 0.8, 0], look_at: [0, 0.8, 0], up: [0, 1, 0] },
  { name: "front", position: [0, 0.8, 2.8], look_at: [0, 0.8, 0], up: [0, 1, 0] },
];

// Tiny 5-joint skeleton: root, spine top, left/right arms.
function makeMotion(frames: number[][][]): MotionPayload {
  return {
    id: "m",
    frame_rate: 20,
    n_frames: frames.length,
    joint_names: ["root", "top", "left", "right", "head"],
    parents: [-1, 0, 1, 1, 1],
    frames,
    views: VIEWS,
  };
}

const T_POSE = [
  [0, 0.8, 0],
  [0, 1.2, 0],
  [0.5, 1.2, 0],
  [-0.5, 1.2, 0],
  [0, 1.5, 0],
];

describe("four-view projection", () => {
  it("renders four synchronized panels from one frame", () => {
    const motion = makeMotion([T_POSE]);
    const panels = projectAllViews(motion, 0, 340, 300);
    expect(panels.map((p) => p.name)).toEqual(["oblique", "top", "side", "front"]);
    for (const panel of panels) {
      expect(panel.segments).toHaveLength(4); // one per bone
      for (const s of panel.segments) {
        for (const v of [s.x1, s.y1, s.x2, s.y2]) {
          expect(Number.isFinite(v)).toBe(true);
          expect(v).toBeGreaterThanOrEqual(0);
          expect(v).toBeLessThanOrEqual(340);
        }
      }
    }
  });

  it("side view overlaps mirrored left/right joints exactly", () => {
    const motion = makeMotion([T_POSE]);
    const radius = motionRadius(motion);
    const side = VIEWS[2];
    const segs = projectSkeleton(motion, 0, side, 340, 300, radius);
    // Segments 1 and 2 are top->left and top->right.
    const left = segs[1];
    const right = segs[2];
    expect(left.x2).toBeCloseTo(right.x2, 10);
    expect(left.y2).toBeCloseTo(right.y2, 10);
  });

  it("front view separates the same joints", () => {
    const motion = makeMotion([T_POSE]);
    const radius = motionRadius(motion);
    const front = VIEWS[3];
    const segs = projectSkeleton(motion, 0, front, 340, 300, radius);
    expect(Math.abs(segs[1].x2 - segs[2].x2)).toBeGreaterThan(10);
  });

  it("one-frame motion is static across repeated draws", () => {
    const motion = makeMotion([T_POSE]);
    const a = projectAllViews(motion, 0, 340, 300);
    const b = projectAllViews(motion, 0, 340, 300);
    expect(a).toEqual(b);
  });

  it("looping indexes wrap around to the first frame", () => {
    const frames = [T_POSE, T_POSE.map((p) => [p[0] + 0.1, p[1], p[2]])];
    const motion = makeMotion(frames);
    expect((59 + 1) % motion.n_frames).toBe(0);
    const last = projectAllViews(motion, (motion.n_frames - 1) % motion.n_frames, 340, 300);
    const wrapped = projectAllViews(motion, motion.n_frames % motion.n_frames, 340, 300);
    expect(wrapped).toEqual(projectAllViews(motion, 0, 340, 300));
    expect(wrapped).not.toEqual(last);
  });

  it("top view handles the degenerate up vector", () => {
    const motion = makeMotion([T_POSE]);
    const radius = motionRadius(motion);
    const segs = projectSkeleton(motion, 0, VIEWS[1], 340, 300, radius);
    for (const s of segs) {
      expect(Number.isFinite(s.x1 + s.y1 + s.x2 + s.y2)).toBe(true);
    }
  });
});
