"""23-joint animation skeleton, the COCO-17 output schema, and the map between them.

World conventions used throughout the package: right-handed, Y up, the subject
faces +Z and the subject's left side is +X. Lengths are meters. Quaternions are
scalar-last ``[x, y, z, w]`` (scipy convention).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


class SkeletonError(ValueError):
    """Raised when a skeleton or keypoint schema violates its invariants."""


# Default joint set: left/right limb chains, a seven-joint spine column, and
# hand-end joints. The two hand ends are the configurable "extra" joints.
DEFAULT_JOINTS = (
    "mid_hip",
    "lower_spine",
    "upper_spine",
    "upper_chest",
    "neck_base",
    "neck_top",
    "head_top",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_toe",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_toe",
)

DEFAULT_PARENTS = {
    "lower_spine": "mid_hip",
    "upper_spine": "lower_spine",
    "upper_chest": "upper_spine",
    "neck_base": "upper_chest",
    "neck_top": "neck_base",
    "head_top": "neck_top",
    "left_shoulder": "upper_chest",
    "left_elbow": "left_shoulder",
    "left_wrist": "left_elbow",
    "left_hand": "left_wrist",
    "right_shoulder": "upper_chest",
    "right_elbow": "right_shoulder",
    "right_wrist": "right_elbow",
    "right_hand": "right_wrist",
    "left_hip": "mid_hip",
    "left_knee": "left_hip",
    "left_ankle": "left_knee",
    "left_toe": "left_ankle",
    "right_hip": "mid_hip",
    "right_knee": "right_hip",
    "right_ankle": "right_knee",
    "right_toe": "right_ankle",
}

DEFAULT_REST_OFFSETS = {
    "mid_hip": (0.0, 0.0, 0.0),
    "lower_spine": (0.0, 0.10, 0.0),
    "upper_spine": (0.0, 0.14, 0.0),
    "upper_chest": (0.0, 0.14, 0.0),
    "neck_base": (0.0, 0.12, 0.0),
    "neck_top": (0.0, 0.10, 0.0),
    "head_top": (0.0, 0.16, 0.0),
    "left_shoulder": (0.18, 0.02, 0.0),
    "left_elbow": (0.28, 0.0, 0.0),
    "left_wrist": (0.26, 0.0, 0.0),
    "left_hand": (0.09, 0.0, 0.0),
    "right_shoulder": (-0.18, 0.02, 0.0),
    "right_elbow": (-0.28, 0.0, 0.0),
    "right_wrist": (-0.26, 0.0, 0.0),
    "right_hand": (-0.09, 0.0, 0.0),
    "left_hip": (0.09, -0.02, 0.0),
    "left_knee": (0.0, -0.42, 0.0),
    "left_ankle": (0.0, -0.40, 0.0),
    "left_toe": (0.0, -0.06, 0.13),
    "right_hip": (-0.09, -0.02, 0.0),
    "right_knee": (0.0, -0.42, 0.0),
    "right_ankle": (0.0, -0.40, 0.0),
    "right_toe": (0.0, -0.06, 0.13),
}

COCO_KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# Bone connectivity of the COCO-17 output, used by the dataset writer.
COCO_SKELETON_EDGES = (
    (16, 14), (14, 12), (17, 15), (15, 13), (12, 13), (6, 12), (7, 13),
    (6, 7), (6, 8), (7, 9), (8, 10), (9, 11), (2, 3), (1, 2), (1, 3),
    (2, 4), (3, 5), (4, 6), (5, 7),
)


@dataclass(frozen=True)
class SkeletonDefinition:
    """Joint hierarchy with per-joint rest offsets (meters, parent frame).

    ``twist_axis`` is the unit bone direction per joint in the rest pose; the
    root carries the global up axis.
    """

    joints: tuple[str, ...] = DEFAULT_JOINTS
    parent: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_PARENTS))
    rest_offsets: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_REST_OFFSETS)
    )
    twist_axis: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.twist_axis:
            axes = {}
            for name in self.joints:
                off = np.asarray(self.rest_offsets.get(name, (0.0, 0.0, 0.0)), float)
                n = np.linalg.norm(off)
                axes[name] = tuple(off / n) if n > 0 else (0.0, 1.0, 0.0)
            object.__setattr__(self, "twist_axis", axes)

    @property
    def root(self) -> str:
        roots = [j for j in self.joints if j not in self.parent]
        if len(roots) != 1:
            raise SkeletonError(f"expected a single root joint, found {roots}")
        return roots[0]

    def index(self, name: str) -> int:
        return self.joints.index(name)

    def parent_indices(self) -> np.ndarray:
        """Array of parent indices, -1 for the root, parents before children."""
        idx = {n: i for i, n in enumerate(self.joints)}
        return np.array(
            [idx[self.parent[j]] if j in self.parent else -1 for j in self.joints],
            dtype=int,
        )

    def rest_offset_array(self) -> np.ndarray:
        return np.array([self.rest_offsets[j] for j in self.joints], dtype=float)

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {j: [] for j in self.joints}
        for child, par in self.parent.items():
            if par in out and child in out:
                out[par].append(child)
        return out

    def bone_pairs(self) -> list[tuple[int, int]]:
        """(parent index, child index) for every non-root joint."""
        idx = {n: i for i, n in enumerate(self.joints)}
        return [(idx[p], idx[c]) for c, p in self.parent.items()]

    def scaled(self, joint_scale: np.ndarray) -> "SkeletonDefinition":
        """New definition with each joint's rest offset multiplied by a scalar."""
        offs = {
            j: tuple(np.asarray(self.rest_offsets[j]) * joint_scale[i])
            for i, j in enumerate(self.joints)
        }
        return SkeletonDefinition(self.joints, dict(self.parent), offs, dict(self.twist_axis))

    def to_json(self) -> dict:
        return {
            "joints": list(self.joints),
            "parents": dict(self.parent),
            "rest_offsets": {k: list(v) for k, v in self.rest_offsets.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "SkeletonDefinition":
        return cls(
            joints=tuple(data["joints"]),
            parent=dict(data["parents"]),
            rest_offsets={k: tuple(v) for k, v in data["rest_offsets"].items()},
        )


def validate_skeleton(defn: SkeletonDefinition, expected_joints: int = 23) -> None:
    """Check skeleton invariants, raising SkeletonError on the first violation.

    Checks, in order: joint count, unknown names in the parent map, single
    root, acyclicity, and strictly positive bone lengths.
    """
    if len(defn.joints) != expected_joints:
        raise SkeletonError(
            f"wrong joint count: expected {expected_joints}, got {len(defn.joints)}"
        )
    if len(set(defn.joints)) != len(defn.joints):
        raise SkeletonError("duplicate joint names")
    known = set(defn.joints)
    for child, par in defn.parent.items():
        if child not in known:
            raise SkeletonError(f"parent map references unknown joint {child!r}")
        if par not in known:
            raise SkeletonError(f"joint {child!r} has unknown parent {par!r}")
    roots = [j for j in defn.joints if j not in defn.parent]
    if len(roots) == 0:
        raise SkeletonError("cycle in parent map: no root joint")
    if len(roots) > 1:
        raise SkeletonError(f"multiple roots: {roots}")
    # Walk up from every joint; revisiting a joint on one walk means a cycle.
    for j in defn.joints:
        seen = {j}
        cur = j
        while cur in defn.parent:
            cur = defn.parent[cur]
            if cur in seen:
                raise SkeletonError(f"cycle in parent map involving {cur!r}")
            seen.add(cur)
    for j in defn.joints:
        if j == roots[0]:
            continue
        if j not in defn.rest_offsets:
            raise SkeletonError(f"missing rest offset for {j!r}")
        if np.linalg.norm(np.asarray(defn.rest_offsets[j], float)) <= 0.0:
            raise SkeletonError(f"zero-length bone at {j!r}")
        if not np.all(np.isfinite(defn.rest_offsets[j])):
            raise SkeletonError(f"non-finite rest offset at {j!r}")


@dataclass(frozen=True)
class KeypointRule:
    """Source rule for one output keypoint.

    Either a single source joint with an offset in that joint's local frame,
    or the midpoint of two source joints (offset ignored for midpoints).
    """

    joint: str | None = None
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    midpoint: tuple[str, str] | None = None


def _direct(joint, offset=(0.0, 0.0, 0.0)):
    return KeypointRule(joint=joint, offset=offset)


def default_schema_rules() -> dict[str, KeypointRule]:
    """Direct joint mapping for the body, head-anchored offsets for the face.

    Face offsets sit on or just outside the head proxy sphere so frontal views
    see them and views from the far side of the head occlude them.
    """
    rules = {
        "nose": _direct("neck_top", (0.0, 0.08, 0.11)),
        "left_eye": _direct("neck_top", (0.035, 0.11, 0.09)),
        "right_eye": _direct("neck_top", (-0.035, 0.11, 0.09)),
        "left_ear": _direct("neck_top", (0.095, 0.08, 0.0)),
        "right_ear": _direct("neck_top", (-0.095, 0.08, 0.0)),
    }
    for name in COCO_KEYPOINTS[5:]:
        rules[name] = _direct(name)
    return rules


@dataclass(frozen=True)
class KeypointSchema:
    """The 17 COCO output keypoints and where each one comes from."""

    rules: dict[str, KeypointRule] = field(default_factory=default_schema_rules)
    name: str = "default"

    def to_json(self) -> dict:
        out = {}
        for kp, rule in self.rules.items():
            if rule.midpoint is not None:
                out[kp] = {"midpoint": list(rule.midpoint)}
            else:
                out[kp] = {"joint": rule.joint, "offset": list(rule.offset)}
        return {"name": self.name, "keypoints": out}

    @classmethod
    def from_json(cls, data: dict) -> "KeypointSchema":
        rules = {}
        for kp, spec in data["keypoints"].items():
            if "midpoint" in spec:
                rules[kp] = KeypointRule(midpoint=tuple(spec["midpoint"]))
            else:
                rules[kp] = KeypointRule(
                    joint=spec["joint"], offset=tuple(spec.get("offset", (0, 0, 0)))
                )
        return cls(rules=rules, name=data.get("name", "custom"))


def raised_hip_schema(raise_m: float = 0.09) -> KeypointSchema:
    """Schema variant anchoring hip keypoints on the pelvis, raised up the torso.

    Hip keypoints are expressed in the pelvis frame so the raise tracks the
    torso rather than the thigh when seated.
    """
    rules = default_schema_rules()
    lh = np.asarray(DEFAULT_REST_OFFSETS["left_hip"])
    rh = np.asarray(DEFAULT_REST_OFFSETS["right_hip"])
    rules["left_hip"] = _direct("mid_hip", tuple(lh + (0.0, raise_m, 0.0)))
    rules["right_hip"] = _direct("mid_hip", tuple(rh + (0.0, raise_m, 0.0)))
    return KeypointSchema(rules=rules, name="raised_hip")


def validate_schema(schema: KeypointSchema, skeleton: SkeletonDefinition) -> None:
    """Check the schema covers all 17 keypoints and references known joints."""
    missing = [k for k in COCO_KEYPOINTS if k not in schema.rules]
    if missing:
        raise SkeletonError(f"schema missing keypoints: {missing}")
    extra = [k for k in schema.rules if k not in COCO_KEYPOINTS]
    if extra:
        raise SkeletonError(f"schema has unknown keypoints: {extra}")
    known = set(skeleton.joints)
    for kp, rule in schema.rules.items():
        if rule.midpoint is not None:
            for j in rule.midpoint:
                if j not in known:
                    raise SkeletonError(f"keypoint {kp!r} references unknown joint {j!r}")
        else:
            if rule.joint not in known:
                raise SkeletonError(f"keypoint {kp!r} references unknown joint {rule.joint!r}")
            if not np.all(np.isfinite(rule.offset)):
                raise SkeletonError(f"keypoint {kp!r} has non-finite offset")


def check_pose(skeleton: SkeletonDefinition, pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=float)
    if pose.shape != (len(skeleton.joints), 3):
        raise SkeletonError(
            f"pose shape {pose.shape} does not match skeleton ({len(skeleton.joints)}, 3)"
        )
    if not np.all(np.isfinite(pose)):
        raise SkeletonError("pose contains non-finite coordinates")
    return pose


def _shortest_arc(a: np.ndarray, b: np.ndarray) -> Rotation:
    """Minimal rotation taking unit vector a to unit vector b."""
    c = np.cross(a, b)
    d = float(np.dot(a, b))
    if 1.0 + d < 1e-12:
        # Antiparallel: rotate by pi about any axis perpendicular to a.
        axis = np.cross(a, (1.0, 0.0, 0.0))
        if np.linalg.norm(axis) < 1e-8:
            axis = np.cross(a, (0.0, 1.0, 0.0))
        axis /= np.linalg.norm(axis)
        return Rotation.from_rotvec(axis * np.pi)
    q = np.array([c[0], c[1], c[2], 1.0 + d])
    return Rotation.from_quat(q / np.linalg.norm(q))


def world_orientations_from_positions(
    skeleton: SkeletonDefinition, pose: np.ndarray
) -> Rotation:
    """Per-joint world orientations consistent with the given joint positions.

    Multi-child joints are solved by best-fit rotation over the child bone
    directions; single-child joints take the minimal (zero-twist) rotation in
    the parent frame, so twist about a bone is always inherited from the
    parent rather than invented. Leaves keep the parent orientation.

    Raises SkeletonError if a bone direction degenerates to a zero vector.
    """
    pose = check_pose(skeleton, pose)
    joints = skeleton.joints
    idx = {n: i for i, n in enumerate(joints)}
    children = skeleton.children()
    rest = skeleton.rest_offset_array()
    parents = skeleton.parent_indices()

    world = [None] * len(joints)
    for i, name in enumerate(joints):
        kids = children[name]
        pidx = parents[i]
        parent_rot = Rotation.identity() if pidx < 0 else world[pidx]
        if not kids:
            world[i] = parent_rot
            continue
        rest_dirs = []
        obs_dirs = []
        for kid in kids:
            k = idx[kid]
            r = rest[k]
            rn = np.linalg.norm(r)
            d = pose[k] - pose[i]
            dn = np.linalg.norm(d)
            if dn <= 1e-12:
                raise SkeletonError(f"degenerate zero-length bone direction at {kid!r}")
            rest_dirs.append(r / rn)
            obs_dirs.append(d / dn)
        if len(kids) == 1:
            local_obs = parent_rot.inv().apply(obs_dirs[0])
            world[i] = parent_rot * _shortest_arc(rest_dirs[0], local_obs)
        else:
            rot, _ = Rotation.align_vectors(np.asarray(obs_dirs), np.asarray(rest_dirs))
            world[i] = rot
    return Rotation.concatenate(world)


def map_pose_to_coco17(
    pose: np.ndarray,
    schema: KeypointSchema,
    skeleton: SkeletonDefinition,
    orientations: Rotation | None = None,
) -> np.ndarray:
    """Map a 3D pose to the 17 COCO keypoints, in COCO order, shape (17, 3).

    Offsets are rotated into world space through the source joint's
    orientation. When ``orientations`` is not supplied it is derived from the
    pose itself.
    """
    pose = check_pose(skeleton, pose)
    validate_schema(schema, skeleton)
    idx = {n: i for i, n in enumerate(skeleton.joints)}

    needs_orient = any(
        r.midpoint is None and np.any(np.asarray(r.offset) != 0.0)
        for r in schema.rules.values()
    )
    if orientations is None and needs_orient:
        orientations = world_orientations_from_positions(skeleton, pose)

    out = np.empty((len(COCO_KEYPOINTS), 3), dtype=float)
    for k, name in enumerate(COCO_KEYPOINTS):
        rule = schema.rules[name]
        if rule.midpoint is not None:
            a, b = rule.midpoint
            out[k] = 0.5 * (pose[idx[a]] + pose[idx[b]])
        else:
            j = idx[rule.joint]
            off = np.asarray(rule.offset, dtype=float)
            if np.any(off != 0.0):
                out[k] = pose[j] + orientations[j].apply(off)
            else:
                out[k] = pose[j]
    return out


def load_skeleton_config(path) -> tuple[SkeletonDefinition, KeypointSchema]:
    """Read skeleton/schema overrides from a generator-format JSON config."""
    with open(path) as f:
        data = json.load(f)
    skel = (
        SkeletonDefinition.from_json(data["skeleton"])
        if "skeleton" in data
        else SkeletonDefinition()
    )
    if "keypoint_schema" in data:
        spec = data["keypoint_schema"]
        if spec == "raised_hip":
            schema = raised_hip_schema()
        elif spec == "default":
            schema = KeypointSchema()
        else:
            schema = KeypointSchema.from_json(spec)
    else:
        schema = KeypointSchema()
    validate_skeleton(skel, expected_joints=len(skel.joints))
    validate_schema(schema, skel)
    return skel, schema
