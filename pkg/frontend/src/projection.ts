// Orthographic view projection for the four skeleton panels. Orthographic
// keeps mirrored joints exactly coincident in a true side view and reads
// cleanly at panel size.

import { MotionPayload, ViewDef } from "./types.js";

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]);
  return [a[0] / n, a[1] / n, a[2] / n];
}

export interface ViewBasis {
  right: Vec3;
  up: Vec3;
  center: Vec3;
}

export function viewBasis(view: ViewDef): ViewBasis {
  const forward = normalize(sub(view.look_at, view.position));
  let right = cross(forward, view.up);
  const n = Math.hypot(...right);
  if (n < 1e-9) {
    // Degenerate up (top view): fall back to a stable horizontal axis.
    right = cross(forward, [1, 0, 0]);
    if (Math.hypot(...right) < 1e-9) right = cross(forward, [0, 0, 1]);
  }
  right = normalize(right);
  const up = normalize(cross(right, forward));
  return { right, up, center: view.look_at };
}

/** Half-extent of the motion around each view's look_at point, for fitting. */
export function motionRadius(motion: MotionPayload): number {
  let r = 0.5;
  for (const frame of motion.frames) {
    for (const p of frame) {
      const d = Math.hypot(p[0], p[1] - 0.8, p[2]);
      if (d > r) r = d;
    }
  }
  return r;
}

export interface ProjectedSegment {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export function projectPoint(
  p: Vec3,
  basis: ViewBasis,
  width: number,
  height: number,
  radius: number,
): [number, number] {
  const rel = sub(p, basis.center);
  const scale = (0.5 * Math.min(width, height) * 0.9) / radius;
  return [
    width / 2 + scale * dot(rel, basis.right),
    height / 2 - scale * dot(rel, basis.up),
  ];
}

/** Bone segments of one frame projected into one view panel. */
export function projectSkeleton(
  motion: MotionPayload,
  frameIndex: number,
  view: ViewDef,
  width: number,
  height: number,
  radius: number,
): ProjectedSegment[] {
  const basis = viewBasis(view);
  const frame = motion.frames[frameIndex];
  const pts = frame.map((p) =>
    projectPoint(p as Vec3, basis, width, height, radius),
  );
  const segments: ProjectedSegment[] = [];
  motion.parents.forEach((parent, j) => {
    if (parent < 0) return;
    segments.push({
      x1: pts[parent][0],
      y1: pts[parent][1],
      x2: pts[j][0],
      y2: pts[j][1],
    });
  });
  return segments;
}

/** All four panels for one frame: the same frame index feeds every view. */
export function projectAllViews(
  motion: MotionPayload,
  frameIndex: number,
  width: number,
  height: number,
): { name: string; segments: ProjectedSegment[] }[] {
  const radius = motionRadius(motion);
  return motion.views.map((view) => ({
    name: view.name,
    segments: projectSkeleton(motion, frameIndex, view, width, height, radius),
  }));
}
