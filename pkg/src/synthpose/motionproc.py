"""Motion processing chain: file IO, low-pass filtering, position-to-rotation
retargeting, seated lower-body affixing, and interpolated rotational noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal
from scipy.spatial.transform import Rotation

from .skeleton import (
    SkeletonDefinition,
    SkeletonError,
    check_pose,
    world_orientations_from_positions,
)


class MotionError(ValueError):
    """Raised for malformed motion files or invalid motion data."""


DEFAULT_FRAME_RATE = 20.0

LOWER_BODY_JOINTS = (
    "left_hip", "left_knee", "left_ankle", "left_toe",
    "right_hip", "right_knee", "right_ankle", "right_toe",
)

# Joints that receive rotational noise; toes follow their ankles.
NOISED_JOINTS = (
    "left_hip", "left_knee", "left_ankle",
    "right_hip", "right_knee", "right_ankle",
)

# Intrinsic Euler sequence for the anatomical channels of a leg joint:
# X = flexion/extension, Z = abduction/adduction, Y = twist about the bone.
ANATOMICAL_EULER_SEQ = "XZY"

HIP_PITCH_FIX_DEG = 35.0


@dataclass(frozen=True)
class MotionSequence:
    """Per-frame world joint positions at a fixed frame rate."""

    frame_rate: float
    joint_names: tuple[str, ...]
    frames: np.ndarray  # (F, J, 3) float
    source: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        object.__setattr__(self, "frames", frames)
        if self.frame_rate <= 0:
            raise MotionError(f"frame_rate must be positive, got {self.frame_rate}")
        if frames.ndim != 3 or frames.shape[0] < 1 or frames.shape[2] != 3:
            raise MotionError(f"frames must have shape (F, J, 3), got {frames.shape}")
        if frames.shape[1] != len(self.joint_names):
            raise MotionError(
                f"{frames.shape[1]} joints per frame but {len(self.joint_names)} names"
            )
        if not np.all(np.isfinite(frames)):
            raise MotionError("frames contain non-finite coordinates")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class RotationSequence:
    """Joint-rotation animation: root trajectory plus per-joint local rotations.

    Rotations are unit quaternions, scalar last, in skeleton joint order.
    """

    skeleton: SkeletonDefinition
    frame_rate: float
    root_positions: np.ndarray  # (F, 3)
    rotations: np.ndarray  # (F, J, 4) xyzw
    source: str = ""

    def __post_init__(self):
        root = np.asarray(self.root_positions, dtype=float)
        rots = np.asarray(self.rotations, dtype=float)
        object.__setattr__(self, "root_positions", root)
        object.__setattr__(self, "rotations", rots)
        J = len(self.skeleton.joints)
        if rots.ndim != 3 or rots.shape[1] != J or rots.shape[2] != 4:
            raise MotionError(f"rotations must have shape (F, {J}, 4), got {rots.shape}")
        if root.shape != (rots.shape[0], 3):
            raise MotionError("root trajectory length does not match rotations")
        norms = np.linalg.norm(rots, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise MotionError("rotations are not unit quaternions")

    @property
    def n_frames(self) -> int:
        return self.rotations.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of the interpolated rotational noise for one channel.

    Knot gaps are Gaussian with mean n/4 and std n/32; knot values are uniform
    in +-amplitude_deg degrees.
    """

    n: int
    amplitude_deg: float = 10.0
    gap_mean: float = field(init=False)
    gap_std: float = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise MotionError(f"noise length must be >= 1, got {self.n}")
        object.__setattr__(self, "gap_mean", self.n / 4.0)
        object.__setattr__(self, "gap_std", self.n / 32.0)


# ---------------------------------------------------------------------------
# Motion file IO. Structured text (JSON), coordinates in meters, Y up.


def load_motion(path, skeleton: SkeletonDefinition | None = None) -> MotionSequence:
    """Read a motion file and validate it against the skeleton joint set.

    Joints may appear in any order in the file; frames are reordered to
    skeleton order by name.
    """
    skeleton = skeleton or SkeletonDefinition()
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise MotionError(f"cannot parse motion file {path}: {e}") from e
    for key in ("frame_rate", "joint_names", "frames"):
        if key not in data:
            raise MotionError(f"motion file {path} missing field {key!r}")
    names = list(data["joint_names"])
    unknown = [n for n in names if n not in skeleton.joints]
    if unknown:
        raise MotionError(f"motion file {path} has unknown joints {unknown}")
    missing = [n for n in skeleton.joints if n not in names]
    if missing:
        raise MotionError(f"motion file {path} missing joints {missing}")
    raw = data["frames"]
    if not raw:
        raise MotionError(f"motion file {path} has no frames")
    J = len(names)
    for fi, frame in enumerate(raw):
        if len(frame) != J:
            raise MotionError(
                f"frame {fi} has {len(frame)} joints, expected {J} ({path})"
            )
        for pt in frame:
            if len(pt) != 3:
                raise MotionError(f"frame {fi} has a non-3D point ({path})")
    frames = np.asarray(raw, dtype=float)
    order = [names.index(j) for j in skeleton.joints]
    frames = frames[:, order, :]
    return MotionSequence(
        frame_rate=float(data["frame_rate"]),
        joint_names=tuple(skeleton.joints),
        frames=frames,
        source=data.get("source", ""),
    )


def save_motion(seq: MotionSequence, path) -> None:
    data = {
        "frame_rate": seq.frame_rate,
        "source": seq.source,
        "joint_names": list(seq.joint_names),
        "frames": seq.frames.tolist(),
    }
    with open(path, "w") as f:
        json.dump(data, f)


def save_rotations(seq: RotationSequence, path) -> None:
    data = {
        "frame_rate": seq.frame_rate,
        "source": seq.source,
        "joint_names": list(seq.skeleton.joints),
        "root_positions": seq.root_positions.tolist(),
        "rotations": seq.rotations.tolist(),
    }
    with open(path, "w") as f:
        json.dump(data, f)


def load_rotations(path, skeleton: SkeletonDefinition | None = None) -> RotationSequence:
    skeleton = skeleton or SkeletonDefinition()
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise MotionError(f"cannot parse rotation file {path}: {e}") from e
    if tuple(data["joint_names"]) != tuple(skeleton.joints):
        raise MotionError(f"rotation file {path} joint order does not match skeleton")
    return RotationSequence(
        skeleton=skeleton,
        frame_rate=float(data["frame_rate"]),
        root_positions=np.asarray(data["root_positions"], dtype=float),
        rotations=np.asarray(data["rotations"], dtype=float),
        source=data.get("source", ""),
    )


# ---------------------------------------------------------------------------
# Low-pass filter


def lowpass_filter(seq: MotionSequence, cutoff_hz: float = 5.0) -> MotionSequence:
    """Zero-phase low-pass of every coordinate channel (4th order, forward-backward).

    Requires frame_rate > 2 * cutoff_hz; output length equals input length.
    """
    if seq.frame_rate <= 2.0 * cutoff_hz:
        raise MotionError(
            f"frame rate {seq.frame_rate} too low for {cutoff_hz} Hz cutoff "
            "(need frame_rate > 2*cutoff)"
        )
    F = seq.n_frames
    if F == 1:
        return replace(seq, frames=seq.frames.copy())
    b, a = signal.butter(4, cutoff_hz / (seq.frame_rate / 2.0), btype="low")
    padlen = min(3 * max(len(a), len(b)), F - 1)
    flat = seq.frames.reshape(F, -1)
    filtered = signal.filtfilt(b, a, flat, axis=0, padlen=padlen)
    return replace(seq, frames=filtered.reshape(seq.frames.shape))


# ---------------------------------------------------------------------------
# Forward kinematics and the position -> rotation solve


def fk_frame(
    rots: RotationSequence, frame_index: int, skeleton: SkeletonDefinition | None = None
) -> tuple[np.ndarray, Rotation]:
    """Positions (J, 3) and world orientations of one frame.

    Accumulates local rotations root-down: a joint's world position is its
    parent's position plus the parent's world rotation applied to the rest
    offset. Passing a different ``skeleton`` retargets the animation onto that
    skeleton's bone lengths.
    """
    if not 0 <= frame_index < rots.n_frames:
        raise IndexError(f"frame {frame_index} out of range [0, {rots.n_frames})")
    skel = skeleton or rots.skeleton
    parents = skel.parent_indices()
    rest = skel.rest_offset_array()
    local = Rotation.from_quat(rots.rotations[frame_index])
    J = len(skel.joints)
    pos = np.empty((J, 3))
    world: list[Rotation] = [None] * J
    for j in range(J):
        p = parents[j]
        if p < 0:
            pos[j] = rots.root_positions[frame_index]
            world[j] = local[j]
        else:
            pos[j] = pos[p] + world[p].apply(rest[j])
            world[j] = world[p] * local[j]
    return pos, Rotation.concatenate(world)


def forward_kinematics(
    rots: RotationSequence, frame_index: int, skeleton: SkeletonDefinition | None = None
) -> np.ndarray:
    """World joint positions (J, 3) of one animation frame."""
    pos, _ = fk_frame(rots, frame_index, skeleton)
    return pos


def fk_all_frames(
    rots: RotationSequence, skeleton: SkeletonDefinition | None = None
) -> np.ndarray:
    """World joint positions for every frame at once, shape (F, J, 3)."""
    skel = skeleton or rots.skeleton
    parents = skel.parent_indices()
    rest = skel.rest_offset_array()
    F, J = rots.rotations.shape[:2]
    pos = np.empty((F, J, 3))
    world_quats = np.empty((F, J, 4))
    for j in range(J):
        local = Rotation.from_quat(rots.rotations[:, j])
        p = parents[j]
        if p < 0:
            pos[:, j] = rots.root_positions
            world_quats[:, j] = local.as_quat()
        else:
            wp = Rotation.from_quat(world_quats[:, p])
            pos[:, j] = pos[:, p] + wp.apply(rest[j])
            world_quats[:, j] = (wp * local).as_quat()
    return pos


def positions_to_rotations(
    seq: MotionSequence, skeleton: SkeletonDefinition | None = None
) -> RotationSequence:
    """Solve local joint rotations whose forward kinematics reproduce the motion.

    The twist degree of freedom of single-child chains (arms in particular) is
    never solved from positions; it is inherited from the parent bone.
    """
    skeleton = skeleton or SkeletonDefinition()
    if tuple(seq.joint_names) != tuple(skeleton.joints):
        raise MotionError("motion joints do not match skeleton")
    parents = skeleton.parent_indices()
    root_idx = int(np.where(parents < 0)[0][0])
    F, J = seq.frames.shape[:2]
    out = np.empty((F, J, 4))
    for fi in range(F):
        try:
            world = world_orientations_from_positions(skeleton, seq.frames[fi])
        except SkeletonError as e:
            raise MotionError(f"frame {fi}: {e}") from e
        wq = world.as_quat()
        for j in range(J):
            p = parents[j]
            if p < 0:
                out[fi, j] = wq[j]
            else:
                local = Rotation.from_quat(wq[p]).inv() * Rotation.from_quat(wq[j])
                out[fi, j] = local.as_quat()
    return RotationSequence(
        skeleton=skeleton,
        frame_rate=seq.frame_rate,
        root_positions=seq.frames[:, root_idx].copy(),
        rotations=out,
        source=seq.source,
    )


# ---------------------------------------------------------------------------
# Seated lower body


def seated_template(skeleton: SkeletonDefinition | None = None) -> dict[str, np.ndarray]:
    """Local rotations pinning the legs to the seated wheelchair posture.

    Before the hip pitch fix the thighs rest 25 degrees below horizontal; the
    fix raises them clear of the footplates. Knees bend 90 degrees, feet stay
    level.
    """
    hip = Rotation.from_euler("x", -65.0, degrees=True).as_quat()
    knee = Rotation.from_euler("x", 90.0, degrees=True).as_quat()
    flat = Rotation.identity().as_quat()
    return {
        "left_hip": hip, "right_hip": hip,
        "left_knee": knee, "right_knee": knee,
        "left_ankle": flat, "right_ankle": flat,
        "left_toe": flat, "right_toe": flat,
    }


def fix_lower_body(
    rots: RotationSequence,
    template: dict[str, np.ndarray] | None = None,
    hip_pitch_deg: float = HIP_PITCH_FIX_DEG,
) -> RotationSequence:
    """Affix hips, knees, ankles and toes to the seated template on every frame.

    An extra pitch of ``hip_pitch_deg`` (thigh raised toward the sky) is
    composed onto both hip joints. Upper-body channels pass through untouched.
    """
    template = template if template is not None else seated_template(rots.skeleton)
    missing = [j for j in LOWER_BODY_JOINTS if j not in template]
    if missing:
        raise MotionError(f"lower-body template missing joints {missing}")
    extra = Rotation.from_euler("x", -hip_pitch_deg, degrees=True)
    new = rots.rotations.copy()
    for name in LOWER_BODY_JOINTS:
        j = rots.skeleton.index(name)
        q = Rotation.from_quat(np.asarray(template[name], dtype=float))
        if name in ("left_hip", "right_hip"):
            q = extra * q
        new[:, j] = np.broadcast_to(q.as_quat(), (rots.n_frames, 4))
    return replace(rots, rotations=new)


# ---------------------------------------------------------------------------
# Rotational noise


def generate_interpolated_noise(spec: NoiseSpec, rng) -> np.ndarray:
    """Piecewise-linear noise over ``spec.n`` frames, in degrees.

    Knot indices start at frame 0 and advance by Gaussian gaps (non-positive
    gap draws are rejected and resampled) until the end of the animation;
    non-integer knots round to the nearest frame and duplicates collapse.
    Knot values are i.i.d. uniform in +-amplitude; values between knots are
    linearly interpolated and the last knot value holds to the end.
    """
    n = spec.n
    knots_real = [0.0]
    x = 0.0
    while True:
        k = rng.normal(spec.gap_mean, spec.gap_std)
        while k <= 0.0:
            k = rng.normal(spec.gap_mean, spec.gap_std)
        x += k
        if x >= n:
            break
        knots_real.append(x)
    knots = sorted({min(n - 1, int(round(x))) for x in knots_real})
    values = rng.uniform(-spec.amplitude_deg, spec.amplitude_deg, size=len(knots))
    values = np.asarray(values, dtype=float)
    return np.interp(np.arange(n), knots, values)


def apply_lower_body_noise(rots: RotationSequence, rng) -> RotationSequence:
    """Add independent interpolated noise to each anatomical channel of each leg joint.

    Channels are the flexion/extension, abduction/adduction and internal
    rotation angles of the hips, knees and ankles; toes follow their ankles.
    All other joints are left bit-identical.
    """
    spec = NoiseSpec(n=rots.n_frames)
    new = rots.rotations.copy()
    for name in NOISED_JOINTS:
        j = rots.skeleton.index(name)
        angles = Rotation.from_quat(rots.rotations[:, j]).as_euler(
            ANATOMICAL_EULER_SEQ, degrees=True
        )
        for axis in range(3):
            angles[:, axis] += generate_interpolated_noise(spec, rng)
        new[:, j] = Rotation.from_euler(
            ANATOMICAL_EULER_SEQ, angles, degrees=True
        ).as_quat()
    return replace(rots, rotations=new)


def prepare_motion(
    seq: MotionSequence,
    skeleton: SkeletonDefinition | None = None,
    rng=None,
    cutoff_hz: float = 5.0,
) -> RotationSequence:
    """Full pose-modification chain: filter, retarget, affix legs, add noise."""
    skeleton = skeleton or SkeletonDefinition()
    filtered = lowpass_filter(seq, cutoff_hz) if seq.frame_rate > 2 * cutoff_hz else seq
    rots = positions_to_rotations(filtered, skeleton)
    rots = fix_lower_body(rots)
    if rng is not None:
        rots = apply_lower_body_noise(rots, rng)
    return rots
