"""Human-evaluation backend: serves motion clips as frame streams with four
canonical camera views, records Likert responses durably, computes the
rating analysis (means, Pearson correlation), and emits the bottom-fraction
motion filter manifest consumed by the generator.
"""

import json
import math
import os
import threading
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .motionproc import MotionError, load_motion
from .skeleton import SkeletonDefinition

SCORE_MIN, SCORE_MAX = 1, 7

# The four synchronized viewpoints the rating UI renders: oblique top, top,
# side and front, all aimed at the subject's chest.
CANONICAL_VIEWS = (
    {"name": "oblique", "position": [1.9, 2.7, 1.9], "look_at": [0.0, 0.8, 0.0], "up": [0.0, 1.0, 0.0]},
    {"name": "top", "position": [0.0, 3.6, 0.0], "look_at": [0.0, 0.8, 0.0], "up": [0.0, 0.0, 1.0]},
    {"name": "side", "position": [2.8, 0.8, 0.0], "look_at": [0.0, 0.8, 0.0], "up": [0.0, 1.0, 0.0]},
    {"name": "front", "position": [0.0, 0.8, 2.8], "look_at": [0.0, 0.8, 0.0], "up": [0.0, 1.0, 0.0]},
)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalResponse:
    participant: str
    motion: str
    ease: int
    frequency: int
    seen_before: bool
    timestamp: float = 0.0

    def validate(self):
        if not SCORE_MIN <= self.ease <= SCORE_MAX:
            raise EvalError(f"ease score {self.ease} outside [{SCORE_MIN}, {SCORE_MAX}]")
        if not SCORE_MIN <= self.frequency <= SCORE_MAX:
            raise EvalError(
                f"frequency score {self.frequency} outside [{SCORE_MIN}, {SCORE_MAX}]"
            )
        if not self.participant:
            raise EvalError("participant id is required")


class ResponseStore:
    """Append-only newline-delimited response log with last-write-wins reads.

    Writes are serialized through one lock; readers always see a consistent
    snapshot because records are whole lines.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def record(self, resp: EvalResponse) -> None:
        resp.validate()
        line = json.dumps(asdict(resp), sort_keys=True)
        with self._lock:
            with open(self.path, "a") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())

    def load(self) -> list[EvalResponse]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if line:
                    out.append(EvalResponse(**json.loads(line)))
        return out

    def latest(self) -> dict:
        """Last response per (participant, motion), in log order."""
        merged = {}
        for r in self.load():
            merged[(r.participant, r.motion)] = r
        return merged


def pearson(x, y) -> float | None:
    """Pearson correlation; None (undefined) on degenerate variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return None
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.sum(xc * yc) / (sx * sy))


def analyze_responses(responses) -> dict:
    """Per-motion means, group means/SDs, and the ease-frequency correlation.

    Accepts an iterable of EvalResponse (or the dict from ResponseStore.latest);
    order independent: later duplicates of a (participant, motion) pair
    overwrite earlier ones by timestamp, then log order.
    """
    if isinstance(responses, dict):
        merged = responses
    else:
        merged = {}
        for r in sorted(responses, key=lambda r: r.timestamp):
            merged[(r.participant, r.motion)] = r
    by_motion: dict = {}
    for (_, motion), r in merged.items():
        by_motion.setdefault(motion, []).append(r)
    per_motion = {}
    for motion in sorted(by_motion):
        rs = by_motion[motion]
        per_motion[motion] = {
            "mean_ease": float(np.mean([r.ease for r in rs])),
            "mean_frequency": float(np.mean([r.frequency for r in rs])),
            "seen_before_rate": float(np.mean([r.seen_before for r in rs])),
            "n_responses": len(rs),
        }
    ease = [m["mean_ease"] for m in per_motion.values()]
    freq = [m["mean_frequency"] for m in per_motion.values()]
    group = {}
    if per_motion:
        group = {
            "mean_ease": float(np.mean(ease)),
            "sd_ease": float(np.std(ease, ddof=1)) if len(ease) > 1 else 0.0,
            "mean_frequency": float(np.mean(freq)),
            "sd_frequency": float(np.std(freq, ddof=1)) if len(freq) > 1 else 0.0,
        }
    return {
        "per_motion": per_motion,
        "group": group,
        "pearson_r": pearson(ease, freq),
        "n_motions": len(per_motion),
    }


def rank_motions(per_motion: dict, use_sums: bool = False) -> list[tuple]:
    """(total score, motion id) ascending; ties resolved by motion id."""
    rows = []
    for motion, m in per_motion.items():
        if use_sums:
            total = m["mean_ease"] * m["n_responses"] + m["mean_frequency"] * m["n_responses"]
        else:
            total = m["mean_ease"] + m["mean_frequency"]
        rows.append((total, motion))
    rows.sort(key=lambda t: (t[0], t[1]))
    return rows


def filter_bottom_fraction(
    per_motion: dict, fraction: float = 0.10, use_sums: bool = False
) -> dict:
    """Split motions into kept/removed by total (ease + frequency) score.

    Removes ceil(fraction * M) motions with the lowest totals; the resulting
    manifest is what the generator consumes to exclude motions.
    """
    if not 0.0 <= fraction <= 1.0:
        raise EvalError(f"fraction must be in [0, 1], got {fraction}")
    if not per_motion:
        raise EvalError("no rated motions to filter")
    rows = rank_motions(per_motion, use_sums=use_sums)
    n_remove = math.ceil(fraction * len(rows))
    removed = [motion for _, motion in rows[:n_remove]]
    kept = [motion for _, motion in rows[n_remove:]]
    return {
        "fraction": fraction,
        "removed": sorted(removed),
        "kept": sorted(kept),
        "ranking": [
            {"motion": m, "total": t, "rank": i + 1, "filtered": i < n_remove}
            for i, (t, m) in enumerate(rows)
        ],
    }


def write_filter_manifest(manifest: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_filter_manifest(path) -> dict:
    with open(path) as f:
        data = json.load(f)
    if "removed" not in data:
        raise EvalError(f"filter manifest {path} missing 'removed'")
    return data


class MotionLibrary:
    """Motion clips served to the rating UI, keyed by file stem."""

    def __init__(self, motion_dir, skeleton: SkeletonDefinition | None = None):
        self.skeleton = skeleton or SkeletonDefinition()
        self.motions = {}
        for path in sorted(Path(motion_dir).glob("*.json")):
            try:
                self.motions[path.stem] = load_motion(path, self.skeleton)
            except MotionError as e:
                raise EvalError(f"bad motion file {path}: {e}") from e
        if not self.motions:
            raise EvalError(f"no motion files found in {motion_dir}")

    def ids(self) -> list[str]:
        return sorted(self.motions)

    def serve_motion_views(self, motion_id: str) -> dict:
        """Frame stream plus the four fixed view definitions for one motion."""
        if motion_id not in self.motions:
            raise KeyError(motion_id)
        seq = self.motions[motion_id]
        parents = self.skeleton.parent_indices()
        return {
            "id": motion_id,
            "frame_rate": seq.frame_rate,
            "n_frames": seq.n_frames,
            "joint_names": list(seq.joint_names),
            "parents": parents.tolist(),
            "frames": seq.frames.tolist(),
            "views": [dict(v) for v in CANONICAL_VIEWS],
        }


def create_app(motion_dir, store_path, static_dir=None):
    """FastAPI app exposing the evaluation endpoints (and optional static UI)."""
    from fastapi import FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware
    from pydantic import BaseModel

    library = MotionLibrary(motion_dir)
    store = ResponseStore(store_path)
    app = FastAPI(title="motion rating service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    class ResponseIn(BaseModel):
        participant: str
        motion: str
        ease: int
        frequency: int
        seen_before: bool

    @app.get("/api/motions")
    def list_motions():
        return {
            "motions": [
                {
                    "id": mid,
                    "n_frames": library.motions[mid].n_frames,
                    "frame_rate": library.motions[mid].frame_rate,
                }
                for mid in library.ids()
            ]
        }

    @app.get("/api/motions/{motion_id}")
    def get_motion(motion_id: str):
        try:
            return library.serve_motion_views(motion_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown motion {motion_id!r}")

    @app.post("/api/responses")
    def post_response(body: ResponseIn):
        if body.motion not in library.motions:
            raise HTTPException(status_code=404, detail=f"unknown motion {body.motion!r}")
        resp = EvalResponse(
            participant=body.participant,
            motion=body.motion,
            ease=body.ease,
            frequency=body.frequency,
            seen_before=body.seen_before,
            timestamp=time.time(),
        )
        try:
            store.record(resp)
        except EvalError as e:
            raise HTTPException(status_code=400, detail=str(e))
        return {"ok": True}

    @app.get("/api/responses/{participant}")
    def get_responses(participant: str):
        out = {}
        for (pid, motion), r in store.latest().items():
            if pid == participant:
                out[motion] = {
                    "ease": r.ease,
                    "frequency": r.frequency,
                    "seen_before": r.seen_before,
                }
        return {"participant": participant, "responses": out}

    @app.get("/api/analysis")
    def get_analysis():
        return analyze_responses(store.latest())

    @app.get("/api/filter")
    def get_filter(fraction: float = 0.10):
        analysis = analyze_responses(store.latest())
        rated = analysis["per_motion"]
        unrated = [m for m in library.ids() if m not in rated]
        if unrated:
            raise HTTPException(
                status_code=409, detail=f"unrated motions present: {unrated[:5]}"
            )
        try:
            return filter_bottom_fraction(rated, fraction)
        except EvalError as e:
            raise HTTPException(status_code=400, detail=str(e))

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(motion_dir, store_path, port: int, static_dir=None, host: str = "127.0.0.1"):
    """Run the service until interrupted."""
    import uvicorn

    app = create_app(motion_dir, store_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
