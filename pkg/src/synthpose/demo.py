"""Procedural demo motion clips: smooth seeded upper-body movement saved in
the motion file format, for quickstarts and end-to-end tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .motionproc import RotationSequence, MotionSequence, fk_all_frames, save_motion
from .skeleton import SkeletonDefinition

# Joints that swing in the demo clips, with per-joint amplitude caps (deg).
_ANIMATED = {
    "left_shoulder": 55.0,
    "right_shoulder": 55.0,
    "left_elbow": 45.0,
    "right_elbow": 45.0,
    "lower_spine": 12.0,
    "upper_spine": 10.0,
    "neck_base": 15.0,
}


def make_demo_motion(
    skeleton: SkeletonDefinition, n_frames: int, frame_rate: float, rng
) -> MotionSequence:
    """One smooth clip: sinusoidal joint swings rendered to joint positions."""
    J = len(skeleton.joints)
    t = np.arange(n_frames) / frame_rate
    quats = np.tile(np.array([0.0, 0.0, 0.0, 1.0]), (n_frames, J, 1))
    for name, amp_cap in _ANIMATED.items():
        j = skeleton.index(name)
        angles = np.zeros((n_frames, 3))
        for axis in range(3):
            amp = rng.uniform(5.0, amp_cap)
            freq = rng.uniform(0.15, 1.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            angles[:, axis] = amp * np.sin(2.0 * np.pi * freq * t + phase)
        quats[:, j] = Rotation.from_euler("xyz", angles, degrees=True).as_quat()
    sway = 0.03 * np.sin(2.0 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 6.28))
    roots = np.column_stack([sway, np.full(n_frames, 0.55), np.zeros(n_frames)])
    rots = RotationSequence(skeleton, frame_rate, roots, quats)
    frames = fk_all_frames(rots)
    return MotionSequence(frame_rate=frame_rate, joint_names=skeleton.joints, frames=frames)


def make_demo_motions(
    out_dir, count: int = 8, seed: int = 0, frame_rate: float = 20.0
) -> list[str]:
    """Write ``count`` seeded demo clips into out_dir; returns motion ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    skeleton = SkeletonDefinition()
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(count):
        n_frames = int(rng.integers(40, 110))
        seq = make_demo_motion(skeleton, n_frames, frame_rate, rng)
        mid = f"motion_{i:03d}"
        save_motion(
            MotionSequence(seq.frame_rate, seq.joint_names, seq.frames, source=mid),
            out / f"{mid}.json",
        )
        ids.append(mid)
    return ids
