"""Detection/pose scoring: IoU and OKS similarity, COCO-style average
precision with greedy confidence matching and 101-point interpolation, and
the per-keypoint battery (PDJ@5, PJPE, single-keypoint OKS precision).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .skeleton import COCO_KEYPOINTS

# Standard COCO per-keypoint falloff constants (sigma); the OKS kappa used in
# the exponent is 2*sigma.
COCO_SIGMAS = np.array(
    [0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72,
     0.62, 0.62, 1.07, 1.07, 0.87, 0.87, 0.89, 0.89]
) / 10.0
OKS_KAPPA = 2.0 * COCO_SIGMAS

IOU_THRESHOLDS = np.array([0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95])
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}
RECALL_GRID = np.linspace(0.0, 1.0, 101)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    image_id: int
    score: float
    bbox: tuple  # (x, y, w, h)
    keypoints: np.ndarray | None = None  # (17, 3): x, y, confidence
    det_id: int | None = None

    def __post_init__(self):
        x, y, w, h = self.bbox
        if not all(math.isfinite(v) for v in (x, y, w, h, self.score)):
            raise MetricsError("detection has non-finite values")
        if w <= 0 or h <= 0:
            raise MetricsError("detection bbox must have positive area")


@dataclass(frozen=True)
class GroundTruth:
    image_id: int
    bbox: tuple
    area: float
    keypoints: np.ndarray | None = None  # (17, 3): x, y, v
    iscrowd: int = 0
    id: int = 0


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def oks(gt_keypoints, gt_area, pred_keypoints) -> float:
    """Object keypoint similarity over the labeled ground-truth keypoints.

    Gaussian per-keypoint terms exp(-d^2 / (2 * s^2 * kappa^2)) with s^2 the
    ground-truth area, averaged over keypoints with v > 0. Raises when no
    keypoint is labeled.
    """
    gt = np.asarray(gt_keypoints, dtype=float).reshape(-1, 3)
    pred = np.asarray(pred_keypoints, dtype=float).reshape(-1, 3)
    labeled = gt[:, 2] > 0
    if not labeled.any():
        raise MetricsError("OKS undefined: ground truth has no labeled keypoints")
    d2 = (gt[labeled, 0] - pred[labeled, 0]) ** 2 + (gt[labeled, 1] - pred[labeled, 1]) ** 2
    denom = 2.0 * gt_area * OKS_KAPPA[labeled] ** 2
    return float(np.mean(np.exp(-d2 / denom)))


def _similarity_matrix(dets, gts, kind: str) -> np.ndarray:
    sim = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            if kind == "iou":
                sim[i, j] = iou(d.bbox, g.bbox)
            else:
                if g.keypoints is None or d.keypoints is None or not (g.keypoints[:, 2] > 0).any():
                    sim[i, j] = 0.0
                else:
                    sim[i, j] = oks(g.keypoints, g.area, d.keypoints)
    return sim


def _greedy_match(sim, det_order, gt_ignored, threshold):
    """COCO greedy matching: detections in confidence order take the best
    remaining gt at or above the threshold, preferring non-ignored gts; ties
    go to the lowest gt index."""
    n_gt = sim.shape[1]
    gt_taken = np.zeros(n_gt, dtype=bool)
    det_match = np.full(sim.shape[0], -1, dtype=int)
    for d in det_order:
        best, best_sim, best_ignored = -1, -1.0, True
        for g in range(n_gt):
            if gt_taken[g]:
                continue
            s = sim[d, g]
            if s < threshold:
                continue
            ignored = bool(gt_ignored[g])
            if best >= 0 and not best_ignored and ignored:
                continue  # never trade a real match for an ignored one
            if (best_ignored and not ignored) or s > best_sim:
                best, best_sim, best_ignored = g, s, ignored
        if best >= 0:
            gt_taken[best] = True
            det_match[d] = best
    return det_match


def _det_area(d: Detection) -> float:
    return d.bbox[2] * d.bbox[3]


def _evaluate_images(preds, gts, kind, threshold, area_range):
    """Per-image matching -> global (scores, tp flags, det-ignored flags, n_gt)."""
    lo, hi = area_range
    by_image_gt: dict = {}
    for g in gts:
        by_image_gt.setdefault(g.image_id, []).append(g)
    by_image_det: dict = {}
    for order, d in enumerate(preds):
        by_image_det.setdefault(d.image_id, []).append((order, d))

    scores, tps, ignored, orders = [], [], [], []
    n_gt = 0
    image_ids = set(by_image_gt) | set(by_image_det)
    for image_id in sorted(image_ids):
        img_gts = by_image_gt.get(image_id, [])
        img_dets = by_image_det.get(image_id, [])
        gt_ignored = np.array(
            [not (lo <= g.area < hi) or (kind == "oks" and (g.keypoints is None or not (g.keypoints[:, 2] > 0).any()))
             for g in img_gts],
            dtype=bool,
        )
        n_gt += int((~gt_ignored).sum())
        if not img_dets:
            continue
        det_order = np.argsort([-d.score for _, d in img_dets], kind="stable")
        sim = _similarity_matrix([d for _, d in img_dets], img_gts, kind)
        match = _greedy_match(sim, det_order, gt_ignored, threshold)
        for i, (order, d) in enumerate(img_dets):
            m = match[i]
            if m >= 0 and not gt_ignored[m]:
                tp, ign = True, False
            elif m >= 0:
                tp, ign = False, True  # matched an ignored gt
            else:
                a = _det_area(d)
                tp, ign = False, not (lo <= a < hi)
            scores.append(d.score)
            tps.append(tp)
            ignored.append(ign)
            orders.append(order)
    return (
        np.asarray(scores),
        np.asarray(tps, dtype=bool),
        np.asarray(ignored, dtype=bool),
        np.asarray(orders),
        n_gt,
    )


def average_precision(scores, tps, ignored, orders, n_gt) -> float | None:
    """101-point interpolated AP from global detection flags.

    Ties in confidence are broken by detection input order. Returns None when
    there is no ground truth to recall.
    """
    if n_gt == 0:
        return None
    keep = ~ignored
    scores, tps, orders = scores[keep], tps[keep], orders[keep]
    if len(scores) == 0:
        return 0.0
    idx = np.lexsort((orders, -scores))
    tps = tps[idx]
    tp_cum = np.cumsum(tps)
    fp_cum = np.cumsum(~tps)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    # Monotone non-increasing envelope, then sample the 101-point grid.
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    out = 0.0
    j = 0
    for r in RECALL_GRID:
        while j < len(recall) and recall[j] < r:
            j += 1
        out += precision[j] if j < len(recall) else 0.0
    return out / len(RECALL_GRID)


def coco_ap(preds, gts, kind: str = "iou", area_ranges=None) -> dict:
    """AP table over the 0.50:0.05:0.95 threshold sweep and area splits.

    Returns {"mAP", "AP50", "AP75", "AP_<range>": ...}; size-split APs are
    averaged over the same threshold sweep.
    """
    if kind not in ("iou", "oks"):
        raise MetricsError(f"unknown similarity kind {kind!r}")
    ids = [p.det_id for p in preds if p.det_id is not None]
    if len(set(ids)) != len(ids):
        raise MetricsError("duplicate detection ids")
    if area_ranges is None:
        area_ranges = ("small", "medium", "large") if kind == "iou" else ("medium", "large")
    out = {}
    aps_all = []
    for t in IOU_THRESHOLDS:
        ap = average_precision(*_evaluate_images(preds, gts, kind, t, AREA_RANGES["all"]))
        aps_all.append(ap)
    defined = [a for a in aps_all if a is not None]
    out["mAP"] = float(np.mean(defined)) if defined else None
    out["AP50"] = aps_all[0]
    out["AP75"] = aps_all[5]
    for name in area_ranges:
        aps = []
        for t in IOU_THRESHOLDS:
            aps.append(
                average_precision(*_evaluate_images(preds, gts, kind, t, AREA_RANGES[name]))
            )
        defined = [a for a in aps if a is not None]
        out[f"AP_{name}"] = float(np.mean(defined)) if defined else None
    return out


# ---------------------------------------------------------------------------
# Per-keypoint metrics over OKS-0.5 matched pairs


def matched_pairs(preds, gts, threshold: float = 0.5):
    """Greedy OKS matching at one threshold; yields (gt, det) pairs."""
    by_image_gt: dict = {}
    for g in gts:
        by_image_gt.setdefault(g.image_id, []).append(g)
    by_image_det: dict = {}
    for order, d in enumerate(preds):
        if d.keypoints is not None:
            by_image_det.setdefault(d.image_id, []).append((order, d))
    pairs = []
    for image_id in sorted(by_image_gt):
        img_gts = by_image_gt[image_id]
        img_dets = by_image_det.get(image_id, [])
        if not img_dets:
            continue
        usable = np.array(
            [g.keypoints is None or not (g.keypoints[:, 2] > 0).any() for g in img_gts],
            dtype=bool,
        )
        det_order = np.argsort([-d.score for _, d in img_dets], kind="stable")
        sim = _similarity_matrix([d for _, d in img_dets], img_gts, "oks")
        match = _greedy_match(sim, det_order, usable, threshold)
        for i, (_, d) in enumerate(img_dets):
            if match[i] >= 0 and not usable[match[i]]:
                pairs.append((img_gts[match[i]], d))
    return pairs


def pdj(preds, gts, fraction: float = 0.05) -> dict:
    """Per-keypoint detection rate within fraction * gt bbox diagonal (inclusive)."""
    pairs = matched_pairs(preds, gts)
    if not pairs:
        raise MetricsError("no matched instance pairs")
    hits = np.zeros(len(COCO_KEYPOINTS))
    totals = np.zeros(len(COCO_KEYPOINTS))
    for g, d in pairs:
        diag = math.hypot(g.bbox[2], g.bbox[3])
        labeled = g.keypoints[:, 2] > 0
        dist = np.hypot(
            g.keypoints[:, 0] - d.keypoints[:, 0], g.keypoints[:, 1] - d.keypoints[:, 1]
        )
        totals += labeled
        hits += labeled & (dist <= fraction * diag)
    rates = np.divide(hits, totals, out=np.full_like(hits, np.nan), where=totals > 0)
    return {name: float(rates[i]) for i, name in enumerate(COCO_KEYPOINTS)}


def pjpe(preds, gts) -> dict:
    """Per-keypoint mean Euclidean pixel error over matched labeled keypoints."""
    pairs = matched_pairs(preds, gts)
    if not pairs:
        raise MetricsError("no matched instance pairs")
    errs = [[] for _ in COCO_KEYPOINTS]
    for g, d in pairs:
        labeled = g.keypoints[:, 2] > 0
        dist = np.hypot(
            g.keypoints[:, 0] - d.keypoints[:, 0], g.keypoints[:, 1] - d.keypoints[:, 1]
        )
        for k in np.nonzero(labeled)[0]:
            errs[k].append(dist[k])
    return {
        name: (float(np.mean(errs[i])) if errs[i] else float("nan"))
        for i, name in enumerate(COCO_KEYPOINTS)
    }


def per_keypoint_oks_precision(preds, gts, thresholds=(0.5, 0.75)) -> dict:
    """Precision of the single-keypoint OKS term above each threshold."""
    pairs = matched_pairs(preds, gts)
    if not pairs:
        raise MetricsError("no matched instance pairs")
    out = {}
    for thr in thresholds:
        hits = np.zeros(len(COCO_KEYPOINTS))
        totals = np.zeros(len(COCO_KEYPOINTS))
        for g, d in pairs:
            labeled = g.keypoints[:, 2] > 0
            d2 = (g.keypoints[:, 0] - d.keypoints[:, 0]) ** 2 + (
                g.keypoints[:, 1] - d.keypoints[:, 1]
            ) ** 2
            term = np.exp(-d2 / (2.0 * g.area * OKS_KAPPA**2))
            totals += labeled
            hits += labeled & (term > thr)
        rates = np.divide(hits, totals, out=np.full_like(hits, np.nan), where=totals > 0)
        out[thr] = {name: float(rates[i]) for i, name in enumerate(COCO_KEYPOINTS)}
    return out


# ---------------------------------------------------------------------------
# Report assembly


@dataclass
class MetricReport:
    bb: dict = field(default_factory=dict)
    kp: dict = field(default_factory=dict)
    per_keypoint: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"bb": self.bb, "kp": self.kp, "per_keypoint": self.per_keypoint}

    def table(self) -> str:
        lines = []
        lines.append("Bounding box AP")
        lines.append(f"  {'metric':<12}{'value':>10}")
        for k in ("mAP", "AP50", "AP75", "AP_small", "AP_medium", "AP_large"):
            v = self.bb.get(k)
            lines.append(f"  {k:<12}{(f'{v:.4f}' if v is not None else '   n/a'):>10}")
        lines.append("Keypoint AP")
        for k in ("mAP", "AP50", "AP75", "AP_medium", "AP_large"):
            v = self.kp.get(k)
            lines.append(f"  {k:<12}{(f'{v:.4f}' if v is not None else '   n/a'):>10}")
        lines.append("Per-keypoint metrics")
        lines.append(
            f"  {'keypoint':<16}{'PDJ@5':>8}{'PJPE':>10}{'OKS50':>8}{'OKS75':>8}"
        )
        pk = self.per_keypoint
        for name in COCO_KEYPOINTS:
            row = (
                f"  {name:<16}"
                f"{pk['pdj'][name]:>8.3f}"
                f"{pk['pjpe'][name]:>10.2f}"
                f"{pk['oks_precision'][0.5][name]:>8.3f}"
                f"{pk['oks_precision'][0.75][name]:>8.3f}"
            )
            lines.append(row)
        return "\n".join(lines)


def evaluate(preds, gts) -> MetricReport:
    """Full metric battery: BB AP, KP AP, and per-keypoint PDJ/PJPE/OKS."""
    report = MetricReport()
    report.bb = coco_ap(preds, gts, "iou")
    has_kp = any(d.keypoints is not None for d in preds) and any(
        g.keypoints is not None for g in gts
    )
    if has_kp:
        report.kp = coco_ap(preds, gts, "oks")
        try:
            report.per_keypoint = {
                "pdj": pdj(preds, gts),
                "pjpe": pjpe(preds, gts),
                "oks_precision": per_keypoint_oks_precision(preds, gts),
            }
        except MetricsError:
            report.per_keypoint = {}
    return report


def aggregate_reports(reports: list[MetricReport]) -> dict:
    """Multi-run mean +- maximum absolute deviation, per scalar metric."""

    def agg(values):
        vals = [v for v in values if v is not None]
        if not vals:
            return None
        mean = float(np.mean(vals))
        return {"mean": mean, "max_abs_dev": float(max(abs(v - mean) for v in vals))}

    out = {"bb": {}, "kp": {}}
    for section in ("bb", "kp"):
        keys = set()
        for r in reports:
            keys |= set(getattr(r, section).keys())
        for k in sorted(keys):
            out[section][k] = agg([getattr(r, section).get(k) for r in reports])
    return out


# ---------------------------------------------------------------------------
# File IO


def load_ground_truth(path) -> list[GroundTruth]:
    with open(path) as f:
        data = json.load(f)
    gts = []
    for a in data["annotations"]:
        if a.get("category_id", 1) != 1:
            continue
        kp = None
        if a.get("keypoints"):
            kp = np.asarray(a["keypoints"], dtype=float).reshape(-1, 3)
        x, y, w, h = a["bbox"]
        gts.append(
            GroundTruth(
                image_id=a["image_id"],
                bbox=tuple(a["bbox"]),
                area=float(a.get("area", w * h)),
                keypoints=kp,
                iscrowd=a.get("iscrowd", 0),
                id=a.get("id", 0),
            )
        )
    return gts


def load_detections(path) -> list[Detection]:
    """Standard results file: a JSON list of detection records."""
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise MetricsError("detection file must contain a JSON list")
    dets = []
    for i, r in enumerate(data):
        kp = None
        if r.get("keypoints"):
            kp = np.asarray(r["keypoints"], dtype=float).reshape(-1, 3)
        bbox = r.get("bbox")
        if bbox is None and kp is not None:
            labeled = kp[:, 2] > 0
            xs, ys = kp[labeled, 0], kp[labeled, 1]
            bbox = (float(xs.min()), float(ys.min()),
                    float(xs.max() - xs.min() + 1), float(ys.max() - ys.min() + 1))
        dets.append(
            Detection(
                image_id=r["image_id"],
                score=float(r["score"]),
                bbox=tuple(bbox),
                keypoints=kp,
                det_id=int(r.get("id", i)),
            )
        )
    return dets
