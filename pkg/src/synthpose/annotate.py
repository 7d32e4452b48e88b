"""Scene annotation: pinhole projection, ray-cast visibility labeling,
silhouette bounding boxes, COCO dataset writing, and debug previews.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry
from .geometry import Solid, SolidSet
from .scenegen import RandomizerConfig, SceneSample, refresh_human_pool
from .skeleton import (
    COCO_KEYPOINTS,
    COCO_SKELETON_EDGES,
    KeypointSchema,
    SkeletonDefinition,
)

IMAGE_WIDTH = 1280
IMAGE_HEIGHT = 720

NOT_VISIBLE, OCCLUDED, VISIBLE = 0, 1, 2

# World distance slack before a ray hit counts as occlusion.
OCCLUSION_THRESHOLD_M = 0.02

BONE_RADIUS_RATIO = 0.12
MIN_BONE_RADIUS = 0.02


class AnnotateError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: pose, vertical FOV, fixed 1280x720 16:9 sensor."""

    position: np.ndarray
    rotation: Rotation
    vfov_deg: float
    focal_length_mm: float = 0.0
    width: int = IMAGE_WIDTH
    height: int = IMAGE_HEIGHT

    def __post_init__(self):
        if not 0.0 < self.vfov_deg < 180.0:
            raise AnnotateError(f"vertical FOV must be in (0, 180), got {self.vfov_deg}")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))

    @classmethod
    def from_sample(cls, cam) -> "CameraModel":
        return cls(
            position=np.asarray(cam.position),
            rotation=Rotation.from_euler("xyz", cam.rotation_euler, degrees=True),
            vfov_deg=cam.vfov_deg,
            focal_length_mm=cam.focal_length_mm,
        )


def project_points(points: np.ndarray, cam: CameraModel):
    """Project world points. Returns (pixels, depth, in_frustum).

    Pixel origin is the top-left image corner; points behind the camera or
    outside the 16:9 frustum are flagged out of view (their pixel values are
    still the mathematical projection where depth > 0).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    local = cam.rotation.inv().apply(pts - cam.position)
    z = local[:, 2]
    tan_half = np.tan(np.radians(cam.vfov_deg) / 2.0)
    tan_half_h = tan_half * (cam.width / cam.height)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_ndc = local[:, 0] / (z * tan_half_h)
        y_ndc = local[:, 1] / (z * tan_half)
    px = (1.0 + x_ndc) / 2.0 * cam.width
    py = (1.0 - y_ndc) / 2.0 * cam.height
    pixels = np.column_stack([px, py])
    # Inclusive edges, with an epsilon so exact-boundary geometry is not
    # dropped to floating-point rounding.
    eps = 1e-9
    in_frustum = (
        (z > 0)
        & (px >= -eps) & (px <= cam.width + eps)
        & (py >= -eps) & (py <= cam.height + eps)
    )
    return pixels, z, in_frustum


def project_point(point, cam: CameraModel):
    """Single-point projection: (x, y) pixels, or None when out of view."""
    pixels, _, ok = project_points(np.asarray(point)[None, :], cam)
    return (float(pixels[0, 0]), float(pixels[0, 1])) if ok[0] else None


def unproject_pixel(cam: CameraModel, px: float, py: float):
    """World ray (origin, unit direction) through a pixel."""
    tan_half = np.tan(np.radians(cam.vfov_deg) / 2.0)
    tan_half_h = tan_half * (cam.width / cam.height)
    x_ndc = 2.0 * px / cam.width - 1.0
    y_ndc = 1.0 - 2.0 * py / cam.height
    d_local = np.array([x_ndc * tan_half_h, y_ndc * tan_half, 1.0])
    d = cam.rotation.apply(d_local)
    return cam.position.copy(), d / np.linalg.norm(d)


def classify_visibility(
    keypoints: np.ndarray,
    solids: SolidSet,
    cam: CameraModel,
    exclude: np.ndarray | None = None,
    threshold: float = OCCLUSION_THRESHOLD_M,
) -> np.ndarray:
    """Visibility class per keypoint: 0 out-of-view, 1 occluded, 2 visible.

    A keypoint is occluded when the camera ray hits any solid more than
    ``threshold`` in front of it; ``exclude`` masks per-keypoint solids
    (its own bone capsules) out of the test.
    """
    kps = np.atleast_2d(keypoints)
    _, _, in_frustum = project_points(kps, cam)
    labels = np.full(len(kps), NOT_VISIBLE, dtype=np.int8)
    idx = np.nonzero(in_frustum)[0]
    if idx.size:
        dirs = kps[idx] - cam.position
        dist = np.linalg.norm(dirs, axis=1)
        dirs = dirs / dist[:, None]
        sub_exclude = exclude[idx] if exclude is not None else None
        hit = solids.ray_any_hit(
            np.broadcast_to(cam.position, (idx.size, 3)),
            dirs,
            t_max=dist - threshold,
            exclude=sub_exclude,
        )
        labels[idx] = np.where(hit, OCCLUDED, VISIBLE)
    return labels


# ---------------------------------------------------------------------------
# Batched forward kinematics over the humans of one frame (plain quaternions,
# scalar last, to keep the per-frame hot path allocation-light).


def _quat_mul(q1, q2):
    x1, y1, z1, w1 = q1[..., 0], q1[..., 1], q1[..., 2], q1[..., 3]
    x2, y2, z2, w2 = q2[..., 0], q2[..., 1], q2[..., 2], q2[..., 3]
    return np.stack(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ],
        axis=-1,
    )


def _quat_apply(q, v):
    qv = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def fk_batch(rotations, root_positions, rest_offsets, parents):
    """FK for a batch of humans: (H,J,4), (H,3), (H,J,3) -> (H,J,3), (H,J,4)."""
    H, J = rotations.shape[:2]
    pos = np.empty((H, J, 3))
    world = np.empty((H, J, 4))
    for j in range(J):
        p = parents[j]
        if p < 0:
            pos[:, j] = root_positions
            world[:, j] = rotations[:, j]
        else:
            pos[:, j] = pos[:, p] + _quat_apply(world[:, p], rest_offsets[:, j])
            world[:, j] = _quat_mul(world[:, p], rotations[:, j])
    return pos, world


def _schema_tables(schema: KeypointSchema, skeleton: SkeletonDefinition):
    """Vector form of the schema: per keypoint (is_mid, j1, j2, offset)."""
    idx = {n: i for i, n in enumerate(skeleton.joints)}
    is_mid = np.zeros(len(COCO_KEYPOINTS), dtype=bool)
    j1 = np.zeros(len(COCO_KEYPOINTS), dtype=int)
    j2 = np.zeros(len(COCO_KEYPOINTS), dtype=int)
    offsets = np.zeros((len(COCO_KEYPOINTS), 3))
    for k, name in enumerate(COCO_KEYPOINTS):
        rule = schema.rules[name]
        if rule.midpoint is not None:
            is_mid[k] = True
            j1[k] = idx[rule.midpoint[0]]
            j2[k] = idx[rule.midpoint[1]]
        else:
            j1[k] = j2[k] = idx[rule.joint]
            offsets[k] = rule.offset
    return is_mid, j1, j2, offsets


def _keypoints_batch(pos, world, tables):
    """(H,J,3), (H,J,4) joint data -> (H,17,3) keypoints."""
    is_mid, j1, j2, offsets = tables
    kp = 0.5 * (pos[:, j1] + pos[:, j2])
    has_off = ~is_mid & np.any(offsets != 0.0, axis=1)
    if has_off.any():
        k = np.nonzero(has_off)[0]
        kp[:, k] = pos[:, j1[k]] + _quat_apply(world[:, j1[k]], offsets[k][None, :, :])
    return kp


# ---------------------------------------------------------------------------
# Proxy geometry

# Wheelchair pieces in the human's local frame (canonical cylinder axis is Y,
# wheels spin about the body's X axis).
_Y_TO_X = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
WHEEL_CENTERS = ((0.30, 0.31, 0.05), (-0.30, 0.31, 0.05))
WHEEL_HALF_H, WHEEL_RADIUS = 0.025, 0.31
SEAT_CENTER, SEAT_HALF = (0.0, 0.48, 0.0), (0.22, 0.04, 0.22)
FOOTPLATE_CENTER, FOOTPLATE_HALF = (0.0, 0.13, 0.45), (0.15, 0.02, 0.12)

# Canonical primitives are 0.1 m across before the table's scale range is
# applied, keeping occluder volumes in the same regime as real scene clutter.
_OCCLUDER_PARAMS = {
    "sphere": (0.05,),
    "box": (0.05, 0.05, 0.05),
    "cylinder": (0.05, 0.05),
    "capsule": (0.025, 0.025),
}

BACKGROUND_WALL_Z = 8.0


def human_proxy_solids(joints_world, M_h, Minv_h, t_h, spine_indices):
    """Capsules per bone, a torso box, a head sphere, and the wheelchair.

    joints_world: (J, 3) posed joint positions already placed in the world.
    Returns (solids, capsule_axes) where capsule_axes holds the world segment
    endpoints of each capsule, aligned with the capsule entries in solids.
    """
    mid_hip, neck_base, neck_top, head_top, parents = spine_indices
    child = np.nonzero(parents >= 0)[0]
    a = joints_world[parents[child]]
    b = joints_world[child]
    lengths = np.linalg.norm(b - a, axis=1)
    keep = lengths > 1e-9
    radii = np.maximum(BONE_RADIUS_RATIO * lengths[keep], MIN_BONE_RADIUS)
    solids: list[Solid] = geometry.capsules_between_batch(a[keep], b[keep], radii)
    axes = list(zip(a[keep], b[keep]))

    spine = joints_world[neck_base] - joints_world[mid_hip]
    L = np.linalg.norm(spine)
    if L > 1e-9:
        y = spine / L
        xh = M_h @ np.array([1.0, 0.0, 0.0])
        xh = xh - np.dot(xh, y) * y
        if np.linalg.norm(xh) < 1e-9:
            xh = np.array([1.0, 0.0, 0.0])
        xh /= np.linalg.norm(xh)
        z = np.cross(xh, y)
        R = np.column_stack([xh, y, z])
        s = L / 0.50
        # Bottom face sits at the pelvis so the hip joints stay outside; the
        # top pad reaches over the shoulder line.
        solids.append(
            Solid(
                "box",
                R,
                0.5 * (joints_world[mid_hip] + joints_world[neck_base]) + y * (0.025 * s),
                (0.16 * s, L / 2.0 + 0.025 * s, 0.11 * s),
                Minv=R.T,
            )
        )
    head = joints_world[head_top] - joints_world[neck_top]
    hl = np.linalg.norm(head)
    if hl > 1e-9:
        solids.append(
            geometry.sphere(0.5 * (joints_world[neck_top] + joints_world[head_top]), 0.6 * hl)
        )

    for c in WHEEL_CENTERS:
        solids.append(
            Solid(
                "cylinder",
                M_h @ _Y_TO_X,
                M_h @ np.asarray(c) + t_h,
                (WHEEL_HALF_H, WHEEL_RADIUS),
                Minv=_Y_TO_X.T @ Minv_h,
            )
        )
    solids.append(Solid("box", M_h, M_h @ np.asarray(SEAT_CENTER) + t_h, SEAT_HALF, Minv=Minv_h))
    solids.append(
        Solid("box", M_h, M_h @ np.asarray(FOOTPLATE_CENTER) + t_h, FOOTPLATE_HALF, Minv=Minv_h)
    )
    return solids, axes


def occluder_solid(occ) -> Solid:
    return geometry.affine_solid(
        occ.kind, occ.rotation_euler, occ.scale, occ.position, _OCCLUDER_PARAMS[occ.kind]
    )


def background_wall_solid() -> Solid:
    return geometry.box((0.0, 0.0, BACKGROUND_WALL_Z), (12.0, 9.0, 0.05))


# ---------------------------------------------------------------------------
# Frame annotation


@dataclass(frozen=True)
class AnnotatedInstance:
    keypoints_px: np.ndarray  # (17, 2)
    visibility: np.ndarray  # (17,) in {0, 1, 2}
    bbox: tuple  # (x, y, w, h) pixels
    occluded_fraction: float
    keypoints_world: np.ndarray  # (17, 3)
    forward: tuple  # unit world heading of the instance


@dataclass(frozen=True)
class AnnotatedFrame:
    frame_index: int
    camera: CameraModel
    instances: tuple
    scene: SceneSample


def annotate_scene(
    scene: SceneSample,
    animations: dict,
    skeleton: SkeletonDefinition,
    schema: KeypointSchema,
    config: RandomizerConfig,
) -> AnnotatedFrame:
    """Project one sampled scene into per-instance COCO-style ground truth.

    Humans with no keypoint inside the frustum (out of view or behind the
    camera) are dropped. Bounding boxes are tight over the projected surface
    samples of the human's own proxy geometry plus its keypoints, clipped to
    the image.
    """
    cam = CameraModel.from_sample(scene.camera)
    parents = skeleton.parent_indices()
    rest = skeleton.rest_offset_array()
    tables = _schema_tables(schema, skeleton)
    pool = refresh_human_pool(config, scene.seed, scene.frame_index)
    spine_idx = (
        skeleton.index("mid_hip"),
        skeleton.index("neck_base"),
        skeleton.index("neck_top"),
        skeleton.index("head_top"),
        parents,
    )

    H = len(scene.humans)
    if H:
        rots = np.empty((H, len(skeleton.joints), 4))
        rests = np.empty((H, len(skeleton.joints), 3))
        for i, h in enumerate(scene.humans):
            seq = animations[h.clip_id]
            rots[i] = seq.rotations[h.pose_frame]
            body = pool[h.pool_index]
            rests[i] = rest * (np.asarray(body.segment_scales) * body.stature_scale)[:, None]
        roots = np.broadcast_to(
            np.array([0.0, config.seat_height, 0.0]), (H, 3)
        )
        pos_local, world_local = fk_batch(rots, roots, rests, parents)
        kp_local = _keypoints_batch(pos_local, world_local, tables)

    solids: list[Solid] = []
    human_solid_ranges = []
    kps_world_all = []
    forwards = []
    for i, h in enumerate(scene.humans):
        R_h = Rotation.from_euler("xyz", h.rotation_euler, degrees=True).as_matrix()
        s = np.asarray(h.scale, dtype=float)
        M_h = R_h * s[None, :]
        Minv_h = R_h.T / s[:, None]
        t_h = np.asarray(h.position, dtype=float)
        joints_world = pos_local[i] @ M_h.T + t_h
        kps_world_all.append(kp_local[i] @ M_h.T + t_h)
        fwd = R_h @ np.array([0.0, 0.0, 1.0])
        forwards.append(fwd / np.linalg.norm(fwd))
        start = len(solids)
        hs, axes = human_proxy_solids(joints_world, M_h, Minv_h, t_h, spine_idx)
        solids.extend(hs)
        human_solid_ranges.append((start, len(solids), axes))

    for occ in scene.occluders:
        solids.append(occluder_solid(occ))
    solids.append(background_wall_solid())
    solidset = SolidSet(solids)

    K = len(COCO_KEYPOINTS)
    if H:
        kps_flat = np.concatenate(kps_world_all)
        exclude = np.zeros((H * K, len(solidset)), dtype=bool)
        for i in range(H):
            start, _, axes = human_solid_ranges[i]
            kps_world = kps_world_all[i]
            row = i * K
            for c, (a, b) in enumerate(axes):
                ab = b - a
                L2 = float(np.dot(ab, ab))
                tproj = np.clip((kps_world - a) @ ab / L2, 0.0, 1.0)
                closest = a + tproj[:, None] * ab
                d = np.linalg.norm(kps_world - closest, axis=1)
                on_axis = d < 1e-6 * (1.0 + np.linalg.norm(kps_world, axis=1))
                exclude[row : row + K][on_axis, start + c] = True
        vis_flat = classify_visibility(kps_flat, solidset, cam, exclude=exclude)

    instances = []
    for i in range(H):
        kps_world = kps_world_all[i]
        vis = vis_flat[i * K : (i + 1) * K]
        if not (vis > NOT_VISIBLE).any():
            # Every keypoint outside the frustum: instance is ignored.
            continue

        start, end, _ = human_solid_ranges[i]
        surf = [kps_world]
        for s in range(start, end):
            surf.append(geometry.surface_points(solidset.solids[s], 64))
        surf = np.vstack(surf)
        pix, depth, _ = project_points(surf, cam)
        front = depth > 0
        if not front.any():
            continue
        pix = pix[front]
        x0 = max(float(pix[:, 0].min()), 0.0)
        x1 = min(float(pix[:, 0].max()), float(cam.width))
        y0 = max(float(pix[:, 1].min()), 0.0)
        y1 = min(float(pix[:, 1].max()), float(cam.height))
        if x1 <= x0 or y1 <= y0:
            continue

        kp_pix, _, _ = project_points(kps_world, cam)
        instances.append(
            AnnotatedInstance(
                keypoints_px=kp_pix,
                visibility=vis,
                bbox=(x0, y0, x1 - x0, y1 - y0),
                occluded_fraction=float(np.mean(vis == OCCLUDED)),
                keypoints_world=kps_world,
                forward=tuple(forwards[i].tolist()),
            )
        )

    return AnnotatedFrame(
        frame_index=scene.frame_index,
        camera=cam,
        instances=tuple(instances),
        scene=scene,
    )


# ---------------------------------------------------------------------------
# COCO dataset writing


def frame_to_records(frame: AnnotatedFrame) -> dict:
    """Serializable per-frame record (annotations plus sidecar metadata)."""
    insts = []
    for inst in frame.instances:
        kp = np.asarray(inst.keypoints_px, dtype=float).copy()
        v = np.asarray(inst.visibility, dtype=int)
        kp[v == NOT_VISIBLE] = 0.0
        flat = []
        for k in range(len(COCO_KEYPOINTS)):
            flat.extend([float(kp[k, 0]), float(kp[k, 1]), int(v[k])])
        insts.append(
            {
                "keypoints": flat,
                "num_keypoints": int((v > 0).sum()),
                "bbox": [float(b) for b in inst.bbox],
                "occluded_fraction": inst.occluded_fraction,
                "nose_world": [float(x) for x in inst.keypoints_world[0]],
                "forward": list(inst.forward),
            }
        )
    cam = frame.camera
    return {
        "frame_index": frame.frame_index,
        "camera": {
            "position": cam.position.tolist(),
            "rotation_euler": list(frame.scene.camera.rotation_euler),
            "vfov_deg": cam.vfov_deg,
            "focal_length_mm": cam.focal_length_mm,
            "width": cam.width,
            "height": cam.height,
        },
        "instances": insts,
        "human_clips": sorted({h.clip_id for h in frame.scene.humans}),
        "lights": [
            {"enabled": l.enabled, "intensity": l.intensity} for l in frame.scene.lights
        ],
        "sun": frame.scene.sun,
        "post": frame.scene.post,
        "background_id": frame.scene.background_id,
        "seed": frame.scene.seed,
        "n_occluders": len(frame.scene.occluders),
    }


def write_coco_dataset(records: list[dict], out_dir, dataset_name: str = "synthpose"):
    """Write COCO annotations plus the per-frame scene-metadata sidecar.

    ``records`` are frame_to_records outputs, ordered by frame index. Output
    is byte-deterministic for identical inputs.
    """
    if not records:
        raise AnnotateError("no frames to write")
    os.makedirs(out_dir, exist_ok=True)
    images = []
    annotations = []
    ann_id = 1
    for rec in records:
        image_id = rec["frame_index"] + 1
        images.append(
            {
                "id": image_id,
                "file_name": f"frame_{rec['frame_index']:06d}.png",
                "width": rec["camera"]["width"],
                "height": rec["camera"]["height"],
            }
        )
        for inst in rec["instances"]:
            x, y, w, h = inst["bbox"]
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": 1,
                    "iscrowd": 0,
                    "keypoints": inst["keypoints"],
                    "num_keypoints": inst["num_keypoints"],
                    "bbox": inst["bbox"],
                    "area": w * h,
                    "occluded_fraction": inst["occluded_fraction"],
                }
            )
            ann_id += 1
    doc = {
        "info": {"description": dataset_name, "version": "1.0"},
        "licenses": [],
        "images": images,
        "annotations": annotations,
        "categories": [
            {
                "id": 1,
                "name": "person",
                "supercategory": "person",
                "keypoints": list(COCO_KEYPOINTS),
                "skeleton": [list(e) for e in COCO_SKELETON_EDGES],
            }
        ],
    }
    ann_path = os.path.join(out_dir, "annotations.json")
    with open(ann_path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
    meta_path = os.path.join(out_dir, "scene_metadata.jsonl")
    with open(meta_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            f.write("\n")
    return {"annotations": ann_path, "metadata": meta_path}


def render_debug_frame(
    scene: SceneSample,
    animations: dict,
    skeleton: SkeletonDefinition,
    schema: KeypointSchema,
    config: RandomizerConfig,
    path,
    samples_per_solid: int = 256,
) -> None:
    """Depth-shaded point-splat preview of the proxy scene; debugging only."""
    from PIL import Image

    frame = annotate_scene(scene, animations, skeleton, schema, config)
    cam = frame.camera
    solids: list[Solid] = []
    pool = refresh_human_pool(config, scene.seed, scene.frame_index)
    parents = skeleton.parent_indices()
    rest = skeleton.rest_offset_array()
    spine_idx = (
        skeleton.index("mid_hip"),
        skeleton.index("neck_base"),
        skeleton.index("neck_top"),
        skeleton.index("head_top"),
        parents,
    )
    for h in scene.humans:
        seq = animations[h.clip_id]
        body = pool[h.pool_index]
        rests = rest * (np.asarray(body.segment_scales) * body.stature_scale)[:, None]
        pos, world = fk_batch(
            seq.rotations[h.pose_frame][None],
            np.array([[0.0, config.seat_height, 0.0]]),
            rests[None],
            parents,
        )
        R_h = Rotation.from_euler("xyz", h.rotation_euler, degrees=True).as_matrix()
        s = np.asarray(h.scale, dtype=float)
        M_h = R_h * s[None, :]
        Minv_h = R_h.T / s[:, None]
        t_h = np.asarray(h.position, dtype=float)
        hs, _ = human_proxy_solids(pos[0] @ M_h.T + t_h, M_h, Minv_h, t_h, spine_idx)
        solids.extend(hs)
    for occ in scene.occluders:
        solids.append(occluder_solid(occ))
    solids.append(background_wall_solid())

    img = np.full((cam.height, cam.width), 16, dtype=np.uint8)
    zbuf = np.full((cam.height, cam.width), np.inf)
    for s in solids:
        pts = geometry.surface_points(s, samples_per_solid)
        pix, depth, ok = project_points(pts, cam)
        for (x, y), z, good in zip(pix, depth, ok):
            if not good:
                continue
            xi, yi = int(x), int(y)
            for dy in (0, 1):
                for dx in (0, 1):
                    xj = min(xi + dx, cam.width - 1)
                    yj = min(yi + dy, cam.height - 1)
                    if z < zbuf[yj, xj]:
                        zbuf[yj, xj] = z
                        shade = int(np.clip(255.0 * np.exp(-z / 25.0), 32, 255))
                        img[yj, xj] = shade
    Image.fromarray(img, mode="L").save(path, format="PNG")
