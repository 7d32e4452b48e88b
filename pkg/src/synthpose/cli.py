"""Operator command line: dataset generation, dataset statistics, prediction
scoring, motion filtering, and the evaluation service launcher.

Every command is deterministic given its flags and seed (serve excepted) and
supports --json for machine-readable output.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing as mp
import sys
import time
from pathlib import Path

import numpy as np

from . import annotate as annotate_mod
from . import evalsvc, metrics, motionproc, scenegen, stats
from .skeleton import KeypointSchema, SkeletonDefinition, load_skeleton_config

# Noise stream id shared with scenegen's reserved ids (which stop at 7).
MOTION_NOISE_STREAM = 100


def _load_full_config(path):
    if path:
        config = scenegen.load_config(path)
        skeleton, schema = load_skeleton_config(path)
    else:
        config = scenegen.RandomizerConfig()
        skeleton, schema = SkeletonDefinition(), KeypointSchema()
    config.validate()
    return config, skeleton, schema


def _load_motions(motion_dir, skeleton, manifest_path=None):
    motion_dir = Path(motion_dir)
    paths = sorted(motion_dir.glob("*.json"))
    if not paths:
        raise SystemExit(f"error: no motion files in {motion_dir}")
    removed = set()
    if manifest_path:
        removed = set(evalsvc.load_filter_manifest(manifest_path)["removed"])
    motions = {}
    for p in paths:
        if p.stem in removed:
            continue
        motions[p.stem] = motionproc.load_motion(p, skeleton)
    if not motions:
        raise SystemExit("error: filter manifest removed every motion")
    return motions


def prepare_animations(motions, skeleton, seed):
    """Pose-modification chain per motion with a deterministic noise stream."""
    animations = {}
    for idx, mid in enumerate(sorted(motions)):
        rng = np.random.default_rng((int(seed), MOTION_NOISE_STREAM, idx))
        animations[mid] = motionproc.prepare_motion(motions[mid], skeleton, rng=rng)
    return animations


_WORKER_STATE: dict = {}


def _worker_init(config, animations, skeleton, schema, seed):
    _WORKER_STATE.update(
        config=config, animations=animations, skeleton=skeleton, schema=schema, seed=seed
    )


def _annotate_one(frame_index):
    st = _WORKER_STATE
    lengths = {k: v.n_frames for k, v in st["animations"].items()}
    scene = scenegen.sample_scene(st["config"], st["seed"], frame_index, lengths)
    frame = annotate_mod.annotate_scene(
        scene, st["animations"], st["skeleton"], st["schema"], st["config"]
    )
    return frame_index, annotate_mod.frame_to_records(frame)


def generate_dataset(
    config, skeleton, schema, animations, seed, count, out_dir, workers=1
):
    """Sample, annotate, and write ``count`` frames; deterministic merge order."""
    indices = range(count)
    if workers <= 1:
        _worker_init(config, animations, skeleton, schema, seed)
        results = [_annotate_one(i) for i in indices]
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(
            workers,
            initializer=_worker_init,
            initargs=(config, animations, skeleton, schema, seed),
        ) as pool:
            results = list(pool.imap_unordered(_annotate_one, indices, chunksize=16))
    results.sort(key=lambda t: t[0])
    records = [rec for _, rec in results]
    return annotate_mod.write_coco_dataset(records, out_dir)


def cmd_generate(args) -> int:
    config, skeleton, schema = _load_full_config(args.config)
    motions = _load_motions(args.motions, skeleton, args.filter)
    t0 = time.time()
    animations = prepare_animations(motions, skeleton, args.seed)
    t_prep = time.time() - t0
    t0 = time.time()
    paths = generate_dataset(
        config, skeleton, schema, animations, args.seed, args.count, args.out,
        workers=args.workers,
    )
    t_gen = time.time() - t0
    summary = {
        "frames": args.count,
        "motions": len(motions),
        "out": str(args.out),
        "annotations": paths["annotations"],
        "metadata": paths["metadata"],
        "prep_seconds": round(t_prep, 3),
        "generate_seconds": round(t_gen, 3),
        "frames_per_second": round(args.count / t_gen, 2) if t_gen > 0 else None,
    }
    if args.json:
        print(json.dumps(summary))
    else:
        print(
            f"generated {args.count} frames from {len(motions)} motions in "
            f"{t_gen:.1f}s ({summary['frames_per_second']} frames/s) -> {args.out}"
        )
    return 0


def cmd_analyze(args) -> int:
    dataset_dir = Path(args.dataset)
    ann = dataset_dir / "annotations.json" if dataset_dir.is_dir() else dataset_dir
    meta = dataset_dir / "scene_metadata.jsonl" if dataset_dir.is_dir() else None
    try:
        st = stats.compute_dataset_stats(ann, meta)
    except stats.StatsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    comparison = None
    if args.compare:
        cmp_dir = Path(args.compare)
        cmp_ann = cmp_dir / "annotations.json" if cmp_dir.is_dir() else cmp_dir
        cmp_meta = cmp_dir / "scene_metadata.jsonl" if cmp_dir.is_dir() else None
        comparison = stats.compute_dataset_stats(cmp_ann, cmp_meta)
    out_dir = args.out or (dataset_dir if dataset_dir.is_dir() else dataset_dir.parent)
    report_path = stats.write_stats_report(st, out_dir, comparison=comparison)
    if args.plots:
        stats.plot_stats(st, out_dir)
    if args.json:
        with open(report_path) as f:
            print(f.read())
    else:
        cam = "available" if st.camera else "unavailable"
        print(
            f"{st.n_images} images, {st.n_instances} instances "
            f"({st.n_images_with_person} images with people); camera stats {cam}"
        )
        print(f"report: {report_path}")
    return 0


def cmd_evaluate(args) -> int:
    try:
        gts = metrics.load_ground_truth(args.gt)
        preds = metrics.load_detections(args.pred)
    except (OSError, json.JSONDecodeError, KeyError, metrics.MetricsError) as e:
        print(f"error: cannot parse inputs: {e}", file=sys.stderr)
        return 1
    gt_images = {g.image_id for g in gts}
    pred_images = {d.image_id for d in preds}
    orphans = sorted(pred_images - gt_images)
    if orphans:
        print(f"error: predictions reference unknown image ids {orphans[:10]}", file=sys.stderr)
        return 1
    report = metrics.evaluate(preds, gts)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metric_report.json", "w") as f:
            json.dump(report.to_json(), f, indent=2, sort_keys=True)
        with open(out_dir / "metric_report.txt", "w") as f:
            f.write(report.table() + "\n")
    if args.json:
        print(json.dumps(report.to_json()))
    else:
        print(report.table())
    return 0


def cmd_filter_motions(args) -> int:
    store = evalsvc.ResponseStore(args.responses)
    analysis = evalsvc.analyze_responses(store.latest())
    if not analysis["per_motion"]:
        print("error: response log has no responses", file=sys.stderr)
        return 1
    manifest = evalsvc.filter_bottom_fraction(
        analysis["per_motion"], args.fraction, use_sums=args.use_sums
    )
    evalsvc.write_filter_manifest(manifest, args.out)
    if args.json:
        print(json.dumps(manifest))
    else:
        print(
            f"removed {len(manifest['removed'])} of "
            f"{len(manifest['removed']) + len(manifest['kept'])} motions -> {args.out}"
        )
    return 0


def cmd_serve_eval(args) -> int:
    motion_dir = Path(args.motions)
    if not motion_dir.is_dir() or not list(motion_dir.glob("*.json")):
        print(f"error: no motion files in {motion_dir}", file=sys.stderr)
        return 1
    print(f"serving motions from {motion_dir} on port {args.port} (ctrl-c to stop)")
    evalsvc.serve(motion_dir, args.store, args.port, static_dir=args.static)
    return 0


def cmd_demo_motions(args) -> int:
    from .demo import make_demo_motions

    ids = make_demo_motions(args.out, count=args.count, seed=args.seed)
    if args.json:
        print(json.dumps({"motions": ids, "out": str(args.out)}))
    else:
        print(f"wrote {len(ids)} demo motions to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="synthpose",
        description="Synthetic wheelchair-user pose data: generate, analyze, evaluate.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate an annotated synthetic dataset")
    g.add_argument("--config", default=None, help="generator config JSON")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, required=True, help="number of frames")
    g.add_argument("--motions", required=True, help="directory of motion files")
    g.add_argument("--filter", default=None, help="filter manifest excluding motions")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="dataset statistics report")
    a.add_argument("--dataset", required=True)
    a.add_argument("--compare", default=None)
    a.add_argument("--out", default=None)
    a.add_argument("--plots", action="store_true")
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    f = sub.add_parser("filter-motions", help="bottom-fraction motion filter manifest")
    f.add_argument("--responses", required=True, help="response log path")
    f.add_argument("--fraction", type=float, default=0.10)
    f.add_argument("--out", required=True)
    f.add_argument("--use-sums", action="store_true", help="rank by summed raw scores")
    f.add_argument("--json", action="store_true")
    f.set_defaults(func=cmd_filter_motions)

    s = sub.add_parser("serve-eval", help="run the motion rating service")
    s.add_argument("--motions", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--port", type=int, default=8321)
    s.add_argument("--static", default=None, help="static UI directory to serve")
    s.set_defaults(func=cmd_serve_eval)

    d = sub.add_parser("demo-motions", help="write procedural demo motion clips")
    d.add_argument("--out", required=True)
    d.add_argument("--count", type=int, default=8)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--json", action="store_true")
    d.set_defaults(func=cmd_demo_motions)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (motionproc.MotionError, scenegen.SceneGenError, evalsvc.EvalError,
            annotate_mod.AnnotateError, metrics.MetricsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
