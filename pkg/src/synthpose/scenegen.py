"""Domain randomization: deterministic sampling of complete scenes (humans,
occluders, camera, lights, post metadata) from a configurable parameter table.

Every sample is a pure function of (config, seed, frame_index): each
randomizer draws from its own numpy Generator keyed by (seed, stream id,
frame index), so frames can be generated in any order on any number of
workers and come out identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np


class SceneGenError(ValueError):
    """Raised for invalid randomizer configuration or sampling inputs."""


# ---------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def sample(self, rng, size=None):
        return rng.uniform(self.low, self.high, size=size)

    def validate(self, name):
        if not self.low <= self.high:
            raise SceneGenError(f"{name}: uniform bounds reversed ({self.low} > {self.high})")


@dataclass(frozen=True)
class Constant:
    value: float

    def sample(self, rng, size=None):
        return self.value if size is None else np.full(size, self.value)

    def validate(self, name):
        pass


@dataclass(frozen=True)
class Categorical:
    values: tuple
    weights: tuple

    def sample(self, rng, size=None):
        i = rng.choice(len(self.values), size=size, p=np.asarray(self.weights))
        return self.values[i] if size is None else [self.values[k] for k in np.atleast_1d(i)]

    def validate(self, name):
        if len(self.values) != len(self.weights):
            raise SceneGenError(f"{name}: weights do not match values")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise SceneGenError(f"{name}: categorical weights must sum to 1")


Triple = tuple  # three independent scalar distributions (Cartesian / Euler)


def uniform3(a, b):
    return (Uniform(a, b), Uniform(a, b), Uniform(a, b))


def sample_triple(triple, rng) -> np.ndarray:
    return np.array([d.sample(rng) for d in triple], dtype=float)


def _dist_to_json(d):
    if isinstance(d, Uniform):
        return {"uniform": [d.low, d.high]}
    if isinstance(d, Constant):
        return {"constant": d.value}
    if isinstance(d, Categorical):
        return {"categorical": {"values": list(d.values), "weights": list(d.weights)}}
    if isinstance(d, tuple):
        return [_dist_to_json(x) for x in d]
    raise SceneGenError(f"cannot serialize distribution {d!r}")


def _dist_from_json(spec):
    if isinstance(spec, list):
        return tuple(_dist_from_json(x) for x in spec)
    if "uniform" in spec:
        return Uniform(*spec["uniform"])
    if "constant" in spec:
        return Constant(spec["constant"])
    if "categorical" in spec:
        c = spec["categorical"]
        return Categorical(tuple(c["values"]), tuple(c["weights"]))
    raise SceneGenError(f"unknown distribution spec {spec!r}")


# ---------------------------------------------------------------------------
# Randomizer configuration (defaults follow the shipped parameter table)

ETHNICITIES = ("caucasian", "asian", "latin_american", "african", "middle_eastern")
OCCLUDER_KINDS = ("box", "sphere", "cylinder", "capsule")


@dataclass(frozen=True)
class RandomizerConfig:
    # Human model
    humans_per_frame: Uniform = Uniform(5, 12)  # inclusive integer bounds
    human_pool_size: int = 50
    pool_refresh_interval: int = 400
    human_age: Uniform = Uniform(10, 100)
    human_height: Uniform = Uniform(0.1, 1.0)
    human_weight: Uniform = Uniform(0.0, 1.0)
    human_sex: Categorical = Categorical(("male", "female"), (0.5, 0.5))
    human_ethnicity: Categorical = Categorical(ETHNICITIES, (0.2,) * 5)
    segment_scale: Uniform = Uniform(0.9, 1.1)
    human_placement: Triple = field(
        default_factory=lambda: (Uniform(-7.5, 7.5), Uniform(-7.5, 7.5), Uniform(-4, 1))
    )
    human_rotation: Triple = field(
        default_factory=lambda: (Uniform(0, 20), Uniform(0, 360), Uniform(0, 20))
    )
    human_scale: Triple = field(default_factory=lambda: uniform3(0.5, 3))
    # Background / occluder objects
    occluder_volume: Triple = field(default_factory=lambda: uniform3(-7.5, 7.5))
    occluder_separation: Constant = Constant(2.5)
    occluder_max_count: int = 64
    occluder_scale: Triple = field(default_factory=lambda: uniform3(1, 12))
    occluder_rotation: Triple = field(default_factory=lambda: uniform3(0, 360))
    occluder_kind: Categorical = Categorical(OCCLUDER_KINDS, (0.25,) * 4)
    occluder_hue_offset: Uniform = Uniform(-180, 180)
    texture_count: int = 8
    background_count: int = 8
    # Camera
    camera_base_position: tuple = (0.0, 1.0, -19.0)
    camera_position_offset: Triple = field(default_factory=lambda: uniform3(-5, 5))
    camera_base_rotation: tuple = (0.0, 0.0, 0.0)
    camera_rotation_offset: Triple = field(default_factory=lambda: uniform3(-5, 5))
    camera_fov: Uniform = Uniform(5, 50)
    camera_focal_length: Uniform = Uniform(1, 23)
    # Lights
    light_base_positions: tuple = ((-6.0, 9.0, -6.0), (6.0, 9.0, -6.0),
                                   (-6.0, 9.0, 6.0), (6.0, 9.0, 6.0))
    light_position_offset: Triple = field(default_factory=lambda: uniform3(-3.65, 3.65))
    light_rotation_offset: Triple = field(default_factory=lambda: uniform3(-50, 50))
    light_intensity: Uniform = Uniform(5000, 50000)
    light_color: Triple = field(default_factory=lambda: uniform3(0, 1))
    light_enabled_p: float = 0.8
    sun_hour: Uniform = Uniform(0, 24)
    sun_day: Uniform = Uniform(0, 365)
    sun_latitude: Uniform = Uniform(-90, 90)
    # Post processing (recorded as metadata, not pixel-applied)
    post_vignette: Uniform = Uniform(5, 50)
    post_exposure: Uniform = Uniform(5, 10)
    post_white_balance: Uniform = Uniform(-20, 20)
    post_dof_distance: Uniform = Uniform(0.1, 4)
    post_contrast: Uniform = Uniform(-30, 30)
    post_saturation: Uniform = Uniform(-30, 30)
    # Proxy body
    seat_height: float = 0.55

    def validate(self):
        for name in (
            "humans_per_frame", "human_age", "human_height", "human_weight",
            "segment_scale", "occluder_hue_offset", "camera_fov",
            "camera_focal_length", "light_intensity", "sun_hour", "sun_day",
            "sun_latitude", "post_vignette", "post_exposure",
            "post_white_balance", "post_dof_distance", "post_contrast",
            "post_saturation",
        ):
            getattr(self, name).validate(name)
        for name in (
            "human_placement", "human_rotation", "human_scale",
            "occluder_volume", "occluder_scale", "occluder_rotation",
            "camera_position_offset", "camera_rotation_offset",
            "light_position_offset", "light_rotation_offset", "light_color",
        ):
            for k, d in enumerate(getattr(self, name)):
                d.validate(f"{name}[{k}]")
        self.human_sex.validate("human_sex")
        self.human_ethnicity.validate("human_ethnicity")
        self.occluder_kind.validate("occluder_kind")
        if not 0.0 <= self.light_enabled_p <= 1.0:
            raise SceneGenError("light_enabled_p must be a probability")
        if self.human_pool_size < 1 or self.pool_refresh_interval < 1:
            raise SceneGenError("pool size and refresh interval must be >= 1")

    def to_json(self) -> dict:
        out = {}
        for name, value in asdict(self).items():
            cur = getattr(self, name)
            if isinstance(cur, (Uniform, Constant, Categorical, tuple)) and not name.startswith(
                ("camera_base", "light_base")
            ):
                if isinstance(cur, tuple) and not isinstance(cur[0], (Uniform, Constant, Categorical)):
                    out[name] = value
                else:
                    out[name] = _dist_to_json(cur)
            else:
                out[name] = value
        return out

    @classmethod
    def from_json(cls, data: dict) -> "RandomizerConfig":
        kwargs = {}
        defaults = cls()
        for name, spec in data.items():
            if not hasattr(defaults, name):
                raise SceneGenError(f"unknown randomizer config field {name!r}")
            cur = getattr(defaults, name)
            if isinstance(cur, (Uniform, Constant, Categorical)):
                kwargs[name] = _dist_from_json(spec)
            elif isinstance(cur, tuple) and cur and isinstance(cur[0], (Uniform, Constant, Categorical)):
                kwargs[name] = _dist_from_json(spec)
            elif isinstance(cur, tuple):
                kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in spec)
            else:
                kwargs[name] = type(cur)(spec)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Sample records


@dataclass(frozen=True)
class HumanBody:
    """One pooled proxy body: demographic parameters and per-joint bone scales."""

    age: float
    sex: str
    ethnicity: str
    height: float
    weight: float
    stature_scale: float
    segment_scales: tuple


@dataclass(frozen=True)
class HumanSample:
    clip_id: str
    pose_frame: int
    position: tuple
    rotation_euler: tuple
    scale: tuple
    pool_index: int
    wheelchair_dims: tuple  # overall wheelchair bounding dims after scale


@dataclass(frozen=True)
class OccluderSample:
    kind: str
    position: tuple
    rotation_euler: tuple
    scale: tuple
    texture_id: int
    hue_offset: float


@dataclass(frozen=True)
class LightSample:
    position: tuple
    rotation_euler: tuple
    intensity: float
    color: tuple  # RGBA
    enabled: bool


@dataclass(frozen=True)
class CameraSample:
    position: tuple
    rotation_euler: tuple
    vfov_deg: float
    focal_length_mm: float


@dataclass(frozen=True)
class SceneSample:
    frame_index: int
    seed: int
    humans: tuple
    occluders: tuple
    background_id: int
    camera: CameraSample
    lights: tuple
    sun: dict
    post: dict

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


# Stream ids: one independent RNG stream per randomizer family.
_STREAM_HUMAN = 0
_STREAM_OCCLUDER = 1
_STREAM_CAMERA = 2
_STREAM_LIGHT = 3
_STREAM_POST = 4
_STREAM_SUN = 5
_STREAM_POOL = 6
_STREAM_BACKGROUND = 7


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(stream), int(index)))


# Base wheelchair footprint (width, height, depth) at unit human scale.
WHEELCHAIR_BASE_DIMS = (0.66, 0.95, 0.85)


def refresh_human_pool(config: RandomizerConfig, seed: int, iteration: int) -> list[HumanBody]:
    """The proxy-body pool active at the given iteration.

    Regenerated every ``pool_refresh_interval`` iterations; the content is a
    pure function of (seed, iteration // interval).
    """
    epoch = int(iteration) // config.pool_refresh_interval
    rng = _rng(seed, _STREAM_POOL, epoch)
    pool = []
    for _ in range(config.human_pool_size):
        height = float(config.human_height.sample(rng))
        body = HumanBody(
            age=float(config.human_age.sample(rng)),
            sex=config.human_sex.sample(rng),
            ethnicity=config.human_ethnicity.sample(rng),
            height=height,
            weight=float(config.human_weight.sample(rng)),
            # Map the normalized height parameter onto a stature multiplier.
            stature_scale=0.85 + 0.3 * height,
            segment_scales=tuple(config.segment_scale.sample(rng, size=23).tolist()),
        )
        pool.append(body)
    return pool


def poisson_disk_place(
    bounds_min, bounds_max, separation: float, max_count: int, rng, k: int = 30
) -> np.ndarray:
    """Poisson-disk positions inside an axis-aligned box (Bridson's algorithm).

    Every returned point keeps at least ``separation`` from every other; the
    fill stops at ``max_count`` points or when k candidates in a row fail
    around every remaining active point.
    """
    if separation <= 0:
        raise SceneGenError(f"separation must be positive, got {separation}")
    lo = np.asarray(bounds_min, dtype=float)
    hi = np.asarray(bounds_max, dtype=float)
    if np.any(hi <= lo):
        raise SceneGenError("degenerate placement volume")
    extent = hi - lo
    cell = separation / np.sqrt(3.0)
    dims = np.maximum(np.ceil(extent / cell).astype(int), 1)
    grid = np.full(tuple(dims), -1, dtype=int)
    sep2 = separation * separation

    cap = max(int(max_count), 1)
    points = np.empty((cap, 3))
    n_points = 0
    active: list[int] = []

    def cell_of(p):
        c = np.minimum(((p - lo) / cell).astype(int), dims - 1)
        return int(c[0]), int(c[1]), int(c[2])

    def fits(p, c):
        sl = (
            slice(max(c[0] - 2, 0), min(c[0] + 3, dims[0])),
            slice(max(c[1] - 2, 0), min(c[1] + 3, dims[1])),
            slice(max(c[2] - 2, 0), min(c[2] + 3, dims[2])),
        )
        neighbors = grid[sl].ravel()
        neighbors = neighbors[neighbors >= 0]
        if neighbors.size == 0:
            return True
        diff = points[neighbors] - p
        return bool(np.all(np.einsum("ij,ij->i", diff, diff) >= sep2))

    def push(p):
        nonlocal n_points
        points[n_points] = p
        active.append(n_points)
        grid[cell_of(p)] = n_points
        n_points += 1

    push(lo + rng.random(3) * extent)
    while active and n_points < cap:
        ai = int(rng.integers(len(active)))
        base = points[active[ai]]
        # Candidate batch in the [sep, 2*sep] shell around the active point.
        direction = rng.normal(size=(k, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = separation * (1.0 + 7.0 * rng.random(k)) ** (1.0 / 3.0)
        cands = base + direction * radius[:, None]
        in_box = np.all((cands >= lo) & (cands <= hi), axis=1)
        for cand, ok in zip(cands, in_box):
            if not ok:
                continue
            c = cell_of(cand)
            if fits(cand, c):
                push(cand)
                break
        else:
            active.pop(ai)
    return points[:n_points].copy()


def sample_scene(
    config: RandomizerConfig,
    seed: int,
    frame_index: int,
    animations: dict[str, int],
) -> SceneSample:
    """Sample one complete scene. Deterministic in (config, seed, frame_index).

    ``animations`` maps clip id to frame count; each human gets a uniformly
    random frame of a uniformly random clip.
    """
    if not animations:
        raise SceneGenError("animation pool is empty")
    clip_ids = sorted(animations)

    rng_h = _rng(seed, _STREAM_HUMAN, frame_index)
    n_humans = int(rng_h.integers(int(config.humans_per_frame.low),
                                  int(config.humans_per_frame.high) + 1))
    humans = []
    for _ in range(n_humans):
        clip = clip_ids[int(rng_h.integers(len(clip_ids)))]
        pose_frame = int(rng_h.integers(animations[clip]))
        position = sample_triple(config.human_placement, rng_h)
        rotation = sample_triple(config.human_rotation, rng_h)
        scale = sample_triple(config.human_scale, rng_h)
        pool_index = int(rng_h.integers(config.human_pool_size))
        dims = tuple((np.asarray(WHEELCHAIR_BASE_DIMS) * scale).tolist())
        humans.append(
            HumanSample(
                clip_id=clip,
                pose_frame=pose_frame,
                position=tuple(position.tolist()),
                rotation_euler=tuple(rotation.tolist()),
                scale=tuple(scale.tolist()),
                pool_index=pool_index,
                wheelchair_dims=dims,
            )
        )

    rng_o = _rng(seed, _STREAM_OCCLUDER, frame_index)
    vol_lo = np.array([d.low for d in config.occluder_volume])
    vol_hi = np.array([d.high for d in config.occluder_volume])
    positions = poisson_disk_place(
        vol_lo, vol_hi, config.occluder_separation.value, config.occluder_max_count, rng_o
    )
    occluders = []
    for p in positions:
        occluders.append(
            OccluderSample(
                kind=config.occluder_kind.sample(rng_o),
                position=tuple(p.tolist()),
                rotation_euler=tuple(sample_triple(config.occluder_rotation, rng_o).tolist()),
                scale=tuple(sample_triple(config.occluder_scale, rng_o).tolist()),
                texture_id=int(rng_o.integers(config.texture_count)),
                hue_offset=float(config.occluder_hue_offset.sample(rng_o)),
            )
        )

    rng_c = _rng(seed, _STREAM_CAMERA, frame_index)
    camera = CameraSample(
        position=tuple(
            (np.asarray(config.camera_base_position)
             + sample_triple(config.camera_position_offset, rng_c)).tolist()
        ),
        rotation_euler=tuple(
            (np.asarray(config.camera_base_rotation)
             + sample_triple(config.camera_rotation_offset, rng_c)).tolist()
        ),
        vfov_deg=float(config.camera_fov.sample(rng_c)),
        focal_length_mm=float(config.camera_focal_length.sample(rng_c)),
    )

    rng_l = _rng(seed, _STREAM_LIGHT, frame_index)
    lights = []
    for base in config.light_base_positions:
        lights.append(
            LightSample(
                position=tuple(
                    (np.asarray(base) + sample_triple(config.light_position_offset, rng_l)).tolist()
                ),
                rotation_euler=tuple(sample_triple(config.light_rotation_offset, rng_l).tolist()),
                intensity=float(config.light_intensity.sample(rng_l)),
                color=tuple(sample_triple(config.light_color, rng_l).tolist()) + (1.0,),
                enabled=bool(rng_l.random() < config.light_enabled_p),
            )
        )

    rng_s = _rng(seed, _STREAM_SUN, frame_index)
    sun = {
        "hour": float(config.sun_hour.sample(rng_s)),
        "day_of_year": float(config.sun_day.sample(rng_s)),
        "latitude": float(config.sun_latitude.sample(rng_s)),
    }

    rng_p = _rng(seed, _STREAM_POST, frame_index)
    post = {
        "vignette": float(config.post_vignette.sample(rng_p)),
        "exposure": float(config.post_exposure.sample(rng_p)),
        "white_balance": float(config.post_white_balance.sample(rng_p)),
        "dof_distance": float(config.post_dof_distance.sample(rng_p)),
        "contrast": float(config.post_contrast.sample(rng_p)),
        "saturation": float(config.post_saturation.sample(rng_p)),
    }

    rng_b = _rng(seed, _STREAM_BACKGROUND, frame_index)
    background_id = int(rng_b.integers(config.background_count))

    return SceneSample(
        frame_index=int(frame_index),
        seed=int(seed),
        humans=tuple(humans),
        occluders=tuple(occluders),
        background_id=background_id,
        camera=camera,
        lights=tuple(lights),
        sun=sun,
        post=post,
    )


def load_config(path) -> RandomizerConfig:
    """Read a generator config file; unspecified fields keep table defaults."""
    with open(path) as f:
        data = json.load(f)
    return RandomizerConfig.from_json(data.get("randomizers", data))
