"""Dataset statistics over COCO-format annotations: bounding-box count,
size and spatial distributions, per-keypoint visibility and location
heatmaps, and camera pose distributions from scene metadata sidecars.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .skeleton import COCO_KEYPOINTS

BBOX_HEATMAP_GRID = 256
KEYPOINT_HEATMAP_GRID = 64
RELATIVE_SIZE_BINS = 20


class StatsError(ValueError):
    pass


@dataclass
class DatasetStats:
    n_images: int = 0
    n_images_with_person: int = 0
    n_instances: int = 0
    n_labeled_instances: int = 0
    bbox_count_hist: dict = field(default_factory=dict)  # count -> probability
    relative_size_edges: np.ndarray | None = None
    relative_size_hist: np.ndarray | None = None
    bbox_heatmap_raw: np.ndarray | None = None  # total mass = instances
    bbox_heatmap: np.ndarray | None = None
    bbox_heatmap_peak: tuple | None = None  # normalized (x, y) of peak cell
    visibility_probs: np.ndarray | None = None  # (17, 3)
    keypoint_heatmaps_raw: np.ndarray | None = None  # (17, G, G)
    keypoint_heatmaps: np.ndarray | None = None
    camera: dict | None = None


def load_coco(path) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise StatsError(f"cannot parse dataset {path}: {e}") from e
    for key in ("images", "annotations"):
        if key not in data:
            raise StatsError(f"dataset {path} missing {key!r}")
    return data


def bbox_stats(dataset: dict, grid: int = BBOX_HEATMAP_GRID) -> dict:
    """Count histogram, relative-size histogram, and spatial heatmap of boxes.

    Relative size is sqrt(bbox area / image area). Each instance spreads unit
    mass uniformly over the grid cells its box covers, so the raw heatmap
    total equals the instance count. Images without person boxes are left out
    of the count histogram.
    """
    images = {im["id"]: im for im in dataset["images"]}
    anns = [a for a in dataset["annotations"] if a.get("category_id", 1) == 1]
    if not images or not anns:
        raise StatsError("dataset has no person annotations")
    per_image: dict = {}
    for a in anns:
        per_image.setdefault(a["image_id"], []).append(a)

    counts = np.array([len(v) for v in per_image.values()])
    count_hist = {}
    for c in np.unique(counts):
        count_hist[int(c)] = float(np.mean(counts == c))

    rel = []
    heat = np.zeros((grid, grid))
    for image_id, group in per_image.items():
        im = images[image_id]
        iw, ih = im["width"], im["height"]
        for a in group:
            x, y, w, h = a["bbox"]
            rel.append(np.sqrt((w * h) / (iw * ih)))
            cx0 = int(np.clip(np.floor(x / iw * grid), 0, grid - 1))
            cy0 = int(np.clip(np.floor(y / ih * grid), 0, grid - 1))
            cx1 = int(np.clip(np.ceil((x + w) / iw * grid) - 1, cx0, grid - 1))
            cy1 = int(np.clip(np.ceil((y + h) / ih * grid) - 1, cy0, grid - 1))
            ncells = (cx1 - cx0 + 1) * (cy1 - cy0 + 1)
            heat[cy0 : cy1 + 1, cx0 : cx1 + 1] += 1.0 / ncells
    rel = np.asarray(rel)
    hist, edges = np.histogram(rel, bins=RELATIVE_SIZE_BINS, range=(0.0, 1.0))
    hist = hist / hist.sum()
    peak_flat = int(np.argmax(heat))
    py, px = np.unravel_index(peak_flat, heat.shape)
    return {
        "count_hist": count_hist,
        "relative_size_edges": edges,
        "relative_size_hist": hist,
        "heatmap_raw": heat,
        "heatmap": heat / len(rel),
        "peak": ((px + 0.5) / grid, (py + 0.5) / grid),
        "n_instances": len(rel),
        "n_images_with_person": len(per_image),
    }


def keypoint_stats(dataset: dict, grid: int = KEYPOINT_HEATMAP_GRID) -> dict:
    """Per-keypoint visibility probabilities and bbox-normalized heatmaps.

    Keypoint coordinates are normalized against the bounding box top corner
    and size; only labeled keypoints (v > 0) enter the location heatmaps.
    """
    anns = [
        a
        for a in dataset["annotations"]
        if a.get("category_id", 1) == 1 and a.get("keypoints")
    ]
    if not anns:
        raise StatsError("dataset has no keypoint annotations")
    K = len(COCO_KEYPOINTS)
    vis_counts = np.zeros((K, 3))
    heat = np.zeros((K, grid, grid))
    labeled = 0
    for a in anns:
        if "bbox" not in a:
            raise StatsError(f"annotation {a.get('id')} lacks a bbox")
        kp = np.asarray(a["keypoints"], dtype=float).reshape(K, 3)
        v = kp[:, 2].astype(int)
        for c in range(3):
            vis_counts[:, c] += v == c
        bx, by, bw, bh = a["bbox"]
        if bw <= 0 or bh <= 0:
            continue
        labeled += 1
        vis = v > 0
        u = (kp[vis, 0] - bx) / bw
        w = (kp[vis, 1] - by) / bh
        cu = np.clip((u * grid).astype(int), 0, grid - 1)
        cw = np.clip((w * grid).astype(int), 0, grid - 1)
        np.add.at(heat, (np.nonzero(vis)[0], cw, cu), 1.0)
    probs = vis_counts / vis_counts.sum(axis=1, keepdims=True)
    return {
        "visibility_probs": probs,
        "heatmaps_raw": heat,
        "heatmaps": heat / max(labeled, 1),
        "n_annotations": len(anns),
        "n_labeled": labeled,
    }


def load_metadata(path) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def camera_stats(records: list[dict], coverage_every: int = 100) -> dict:
    """Camera elevation/azimuth/distance relative to each instance's nose.

    Elevation is positive when the camera sits above the nose; azimuth is
    positive toward the instance's right; the coverage cloud keeps the unit
    camera direction (in the instance frame) of every 100th instance.
    """
    if not records:
        raise StatsError("no metadata records")
    elevations, azimuths, distances, coverage = [], [], [], []
    up = np.array([0.0, 1.0, 0.0])
    k = 0
    for rec in records:
        cam = np.asarray(rec["camera"]["position"], dtype=float)
        for inst in rec["instances"]:
            if "nose_world" not in inst:
                raise StatsError("instance record lacks nose_world")
            nose = np.asarray(inst["nose_world"], dtype=float)
            fwd = np.asarray(inst.get("forward", (0.0, 0.0, 1.0)), dtype=float)
            delta = cam - nose
            dist = float(np.linalg.norm(delta))
            if dist <= 0:
                continue
            elevations.append(float(np.arcsin(np.clip(delta[1] / dist, -1.0, 1.0))))
            fwd_h = fwd - np.dot(fwd, up) * up
            if np.linalg.norm(fwd_h) < 1e-9:
                fwd_h = np.array([0.0, 0.0, 1.0])
            fwd_h /= np.linalg.norm(fwd_h)
            right = np.cross(fwd_h, up)
            delta_h = delta - delta[1] * up
            azimuths.append(float(np.arctan2(np.dot(delta_h, right), np.dot(delta_h, fwd_h))))
            distances.append(dist)
            if k % coverage_every == 0:
                d = delta / dist
                coverage.append(
                    [float(np.dot(d, right)), float(d[1]), float(np.dot(d, fwd_h))]
                )
            k += 1
    if not distances:
        raise StatsError("metadata has no instances")

    def hist(data, bins, rng):
        h, edges = np.histogram(np.asarray(data), bins=bins, range=rng)
        return h / h.sum(), edges

    dmax = max(distances) * 1.05
    e_h, e_edges = hist(elevations, 36, (-np.pi / 2, np.pi / 2))
    a_h, a_edges = hist(azimuths, 36, (-np.pi, np.pi))
    d_h, d_edges = hist(distances, 30, (0.0, dmax))
    mode_bin = int(np.argmax(d_h))
    return {
        "elevation_hist": e_h,
        "elevation_edges": e_edges,
        "azimuth_hist": a_h,
        "azimuth_edges": a_edges,
        "distance_hist": d_h,
        "distance_edges": d_edges,
        "distance_mode": float(0.5 * (d_edges[mode_bin] + d_edges[mode_bin + 1])),
        "coverage": np.asarray(coverage),
        "n_pairs": len(distances),
    }


def compute_dataset_stats(dataset_path, metadata_path=None) -> DatasetStats:
    data = load_coco(dataset_path)
    b = bbox_stats(data)
    kp = keypoint_stats(data)
    out = DatasetStats(
        n_images=len(data["images"]),
        n_images_with_person=b["n_images_with_person"],
        n_instances=b["n_instances"],
        n_labeled_instances=kp["n_labeled"],
        bbox_count_hist=b["count_hist"],
        relative_size_edges=b["relative_size_edges"],
        relative_size_hist=b["relative_size_hist"],
        bbox_heatmap_raw=b["heatmap_raw"],
        bbox_heatmap=b["heatmap"],
        bbox_heatmap_peak=b["peak"],
        visibility_probs=kp["visibility_probs"],
        keypoint_heatmaps_raw=kp["heatmaps_raw"],
        keypoint_heatmaps=kp["heatmaps"],
    )
    if metadata_path and os.path.exists(metadata_path):
        out.camera = camera_stats(load_metadata(metadata_path))
    return out


def _stats_json(stats: DatasetStats) -> dict:
    out = {
        "n_images": stats.n_images,
        "n_images_with_person": stats.n_images_with_person,
        "n_instances": stats.n_instances,
        "n_labeled_instances": stats.n_labeled_instances,
        "bbox_count_hist": {str(k): v for k, v in stats.bbox_count_hist.items()},
        "relative_size_hist": stats.relative_size_hist.tolist(),
        "relative_size_edges": stats.relative_size_edges.tolist(),
        "bbox_heatmap_peak": list(stats.bbox_heatmap_peak),
        "visibility_probs": {
            name: stats.visibility_probs[i].tolist()
            for i, name in enumerate(COCO_KEYPOINTS)
        },
    }
    if stats.camera is not None:
        cam = stats.camera
        out["camera"] = {
            "elevation_hist": cam["elevation_hist"].tolist(),
            "azimuth_hist": cam["azimuth_hist"].tolist(),
            "distance_hist": cam["distance_hist"].tolist(),
            "distance_edges": cam["distance_edges"].tolist(),
            "distance_mode": cam["distance_mode"],
            "n_pairs": cam["n_pairs"],
        }
    else:
        out["camera"] = None
    return out


def write_stats_report(stats: DatasetStats, out_dir, comparison: DatasetStats | None = None):
    """Report JSON plus CSV heatmap grids (and a comparison column if given)."""
    os.makedirs(out_dir, exist_ok=True)
    report = {"dataset": _stats_json(stats)}
    if comparison is not None:
        report["comparison"] = _stats_json(comparison)
    report_path = os.path.join(out_dir, "stats_report.json")
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    np.savetxt(os.path.join(out_dir, "bbox_heatmap.csv"), stats.bbox_heatmap, delimiter=",")
    for i, name in enumerate(COCO_KEYPOINTS):
        np.savetxt(
            os.path.join(out_dir, f"kp_heatmap_{name}.csv"),
            stats.keypoint_heatmaps[i],
            delimiter=",",
        )
    if stats.camera is not None and len(stats.camera["coverage"]):
        np.savetxt(
            os.path.join(out_dir, "camera_coverage.csv"),
            stats.camera["coverage"],
            delimiter=",",
            header="right,up,forward",
            comments="",
        )
    return report_path


def plot_stats(stats: DatasetStats, out_dir):
    """Optional rendered figures (bbox heatmap, size histogram, visibility)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    axes[0].imshow(stats.bbox_heatmap, origin="upper", cmap="viridis")
    px, py = stats.bbox_heatmap_peak
    g = stats.bbox_heatmap.shape[0]
    axes[0].plot(px * g, py * g, "g+", markersize=14)
    axes[0].set_title("bbox location heatmap")
    centers = 0.5 * (stats.relative_size_edges[:-1] + stats.relative_size_edges[1:])
    axes[1].bar(centers, stats.relative_size_hist, width=centers[1] - centers[0])
    axes[1].set_title("relative bbox size")
    axes[2].imshow(stats.visibility_probs.T, aspect="auto", cmap="magma")
    axes[2].set_yticks([0, 1, 2], ["not visible", "occluded", "visible"])
    axes[2].set_title("keypoint visibility probabilities")
    fig.tight_layout()
    path = os.path.join(out_dir, "stats_overview.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
