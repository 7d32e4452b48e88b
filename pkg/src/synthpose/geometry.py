"""Convex proxy solids (sphere/box/capsule/cylinder) under affine transforms,
with vectorized ray-interval casting, signed-distance evaluation, and surface
sampling. Internal support for scene annotation; not part of the public API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

KINDS = ("sphere", "box", "capsule", "cylinder")

_EPS = 1e-12


@dataclass
class Solid:
    """One convex primitive: canonical shape in local space + affine placement.

    world = M @ local + t. M may include rotation and (non-uniform) scale.
    params: sphere (r,); box (hx, hy, hz); capsule (half_h, r) on the local Y
    axis; cylinder (half_h, r) on the local Y axis.
    """

    kind: str
    M: np.ndarray
    t: np.ndarray
    params: tuple
    Minv: np.ndarray = field(default=None)

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if self.Minv is None:
            self.Minv = np.linalg.inv(self.M)


_EYE3 = np.eye(3)


def sphere(center, radius, M=None, Minv=None) -> Solid:
    if M is None:
        M, Minv = _EYE3, _EYE3
    return Solid("sphere", M, center, (float(radius),), Minv=Minv)


def box(center, half_extents, M=None, Minv=None) -> Solid:
    if M is None:
        M, Minv = _EYE3, _EYE3
    return Solid("box", M, center, tuple(float(h) for h in half_extents), Minv=Minv)


def affine_solid(kind, euler_deg, scale, position, params, extra_rot=None) -> Solid:
    """Solid placed by extrinsic-xyz rotation and per-axis scale.

    extra_rot optionally post-rotates the canonical shape (e.g. to lay a
    cylinder's axis along X) before scaling and placing.
    """
    from scipy.spatial.transform import Rotation

    R = Rotation.from_euler("xyz", euler_deg, degrees=True).as_matrix()
    s = np.asarray(scale, dtype=float)
    M = R * s[None, :]  # R @ diag(s)
    Minv = R.T / s[:, None]  # diag(1/s) @ R.T
    if extra_rot is not None:
        M = M @ extra_rot
        Minv = extra_rot.T @ Minv
    return Solid(kind, M, np.asarray(position, dtype=float), tuple(params), Minv=Minv)


def capsule_between(p0, p1, radius) -> Solid:
    """Capsule whose axis runs between two world points."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = p1 - p0
    L = np.linalg.norm(d)
    if L < _EPS:
        return sphere(p0, radius)
    y = d / L
    # Any orthonormal frame with Y along the axis.
    ref = np.array([1.0, 0.0, 0.0]) if abs(y[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    x = np.cross(ref, y)
    x /= np.linalg.norm(x)
    z = np.cross(x, y)
    M = np.column_stack([x, y, z])
    return Solid("capsule", M, 0.5 * (p0 + p1), (L / 2.0, float(radius)), Minv=M.T)


def capsules_between_batch(p0: np.ndarray, p1: np.ndarray, radii: np.ndarray) -> list[Solid]:
    """Vectorized capsule construction for many world segments at once."""
    p0 = np.atleast_2d(p0)
    p1 = np.atleast_2d(p1)
    d = p1 - p0
    L = np.linalg.norm(d, axis=1)
    y = d / np.maximum(L, _EPS)[:, None]
    ref = np.where(np.abs(y[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]])
    x = np.cross(ref, y)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    z = np.cross(x, y)
    M = np.stack([x, y, z], axis=-1)
    mid = 0.5 * (p0 + p1)
    out = []
    for i in range(len(L)):
        if L[i] < _EPS:
            out.append(sphere(mid[i], radii[i]))
        else:
            out.append(
                Solid("capsule", M[i], mid[i], (L[i] / 2.0, float(radii[i])), Minv=M[i].T)
            )
    return out


def cylinder(center, axis, half_h, radius) -> Solid:
    axis = np.asarray(axis, float)
    y = axis / np.linalg.norm(axis)
    ref = np.array([1.0, 0.0, 0.0]) if abs(y[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    x = np.cross(ref, y)
    x /= np.linalg.norm(x)
    z = np.cross(x, y)
    M = np.column_stack([x, y, z])
    return Solid("cylinder", M, center, (float(half_h), float(radius)))


# ---------------------------------------------------------------------------
# Ray-interval tests, vectorized over (R rays, S solids)


def _slab(o, d, h):
    """Interval of o + t*d within |coord| <= h, per component arrays."""
    big = np.float64(np.inf)
    parallel = np.abs(d) < _EPS
    inside = np.abs(o) <= h
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (-h - o) / d
        t_b = (h - o) / d
    lo = np.minimum(t_a, t_b)
    hi = np.maximum(t_a, t_b)
    lo = np.where(parallel, np.where(inside, -big, big), lo)
    hi = np.where(parallel, np.where(inside, big, -big), hi)
    return lo, hi


def _quadratic_interval(a, b, c):
    """Interval where a t^2 + b t + c <= 0 (a may be ~0)."""
    big = np.float64(np.inf)
    disc = b * b - 4.0 * a * c
    lin = np.abs(a) < _EPS
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
    lo = np.where(ok, np.minimum(t0, t1), big)
    hi = np.where(ok, np.maximum(t0, t1), -big)
    # Degenerate direction: condition reduces to c <= 0 for all t.
    inside = c <= 0.0
    lo = np.where(lin, np.where(inside, -big, big), lo)
    hi = np.where(lin, np.where(inside, big, -big), hi)
    return lo, hi


def _intervals_for_kind(kind, o, d, params):
    """Entry/exit parameter of rays o + t*d against canonical local solids.

    o, d: (..., 3) already in local space. Returns (lo, hi) with lo > hi when
    the ray misses.
    """
    if kind == "sphere":
        r = params[..., 0]
        a = np.sum(d * d, axis=-1)
        b = 2.0 * np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - r * r
        return _quadratic_interval(a, b, c)
    if kind == "box":
        lo = np.full(o.shape[:-1], -np.inf)
        hi = np.full(o.shape[:-1], np.inf)
        for ax in range(3):
            l, h = _slab(o[..., ax], d[..., ax], params[..., ax])
            lo = np.maximum(lo, l)
            hi = np.minimum(hi, h)
        return lo, hi
    if kind == "cylinder":
        half_h = params[..., 0]
        r = params[..., 1]
        a = d[..., 0] ** 2 + d[..., 2] ** 2
        b = 2.0 * (o[..., 0] * d[..., 0] + o[..., 2] * d[..., 2])
        c = o[..., 0] ** 2 + o[..., 2] ** 2 - r * r
        rlo, rhi = _quadratic_interval(a, b, c)
        slo, shi = _slab(o[..., 1], d[..., 1], half_h)
        return np.maximum(rlo, slo), np.minimum(rhi, shi)
    if kind == "capsule":
        half_h = params[..., 0]
        r = params[..., 1]
        # Body: radial quadratic clipped to the segment's y range.
        a = d[..., 0] ** 2 + d[..., 2] ** 2
        b = 2.0 * (o[..., 0] * d[..., 0] + o[..., 2] * d[..., 2])
        c = o[..., 0] ** 2 + o[..., 2] ** 2 - r * r
        blo, bhi = _quadratic_interval(a, b, c)
        slo, shi = _slab(o[..., 1], d[..., 1], half_h)
        blo = np.maximum(blo, slo)
        bhi = np.minimum(bhi, shi)
        lo, hi = blo, bhi
        # End caps; the union of the three convex pieces is one interval.
        for sgn in (1.0, -1.0):
            oc = o.copy()
            oc[..., 1] -= sgn * half_h
            ca = np.sum(d * d, axis=-1)
            cb = 2.0 * np.sum(oc * d, axis=-1)
            cc = np.sum(oc * oc, axis=-1) - r * r
            clo, chi = _quadratic_interval(ca, cb, cc)
            valid_new = clo <= chi
            valid_old = lo <= hi
            lo = np.where(valid_new & ~valid_old, clo, np.where(valid_new, np.minimum(lo, clo), lo))
            hi = np.where(valid_new & ~valid_old, chi, np.where(valid_new, np.maximum(hi, chi), hi))
        return lo, hi
    raise ValueError(f"unknown solid kind {kind!r}")


def _sdf_for_kind(kind, p, params):
    """Signed distance (sign-exact under affine) at local points p (..., 3)."""
    if kind == "sphere":
        return np.linalg.norm(p, axis=-1) - params[..., 0]
    if kind == "box":
        q = np.abs(p) - params
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside
    if kind == "capsule":
        half_h = params[..., 0]
        r = params[..., 1]
        y = np.clip(p[..., 1], -half_h, half_h)
        q = p.copy()
        q[..., 1] -= y
        return np.linalg.norm(q, axis=-1) - r
    if kind == "cylinder":
        half_h = params[..., 0]
        r = params[..., 1]
        dr = np.sqrt(p[..., 0] ** 2 + p[..., 2] ** 2) - r
        dy = np.abs(p[..., 1]) - half_h
        dmax = np.maximum(dr, dy)
        outside = np.sqrt(np.maximum(dr, 0.0) ** 2 + np.maximum(dy, 0.0) ** 2)
        return np.minimum(dmax, 0.0) + outside
    raise ValueError(f"unknown solid kind {kind!r}")


class SolidSet:
    """Scene solids grouped by kind for batched queries.

    Keeps the original insertion index of every solid so callers can address
    exclusions by global solid index.
    """

    def __init__(self, solids: list[Solid]):
        self.solids = solids
        self.by_kind: dict[str, dict] = {}
        for kind in KINDS:
            idx = [i for i, s in enumerate(solids) if s.kind == kind]
            if not idx:
                continue
            group = [solids[i] for i in idx]
            pmax = max(len(s.params) for s in group)
            params = np.zeros((len(group), pmax))
            for k, s in enumerate(group):
                params[k, : len(s.params)] = s.params
            self.by_kind[kind] = {
                "index": np.array(idx, dtype=int),
                "Minv": np.stack([s.Minv for s in group]),
                "t": np.stack([s.t for s in group]),
                "params": params,
            }

    def __len__(self):
        return len(self.solids)

    def ray_any_hit(
        self,
        origins: np.ndarray,
        dirs: np.ndarray,
        t_max: np.ndarray,
        t_min: float = 1e-6,
        exclude: np.ndarray | None = None,
    ) -> np.ndarray:
        """True per ray when any non-excluded solid intersects (t_min, t_max).

        dirs need not be unit length; t is measured in units of |dirs|.
        exclude: optional (R, n_solids) boolean mask of solids to skip per ray.
        """
        origins = np.atleast_2d(origins)
        dirs = np.atleast_2d(dirs)
        R = origins.shape[0]
        hit = np.zeros(R, dtype=bool)
        t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (R,))
        for kind, g in self.by_kind.items():
            o_loc = np.einsum("sij,rsj->rsi", g["Minv"], origins[:, None, :] - g["t"][None, :, :])
            d_loc = np.einsum("sij,rj->rsi", g["Minv"], dirs)
            lo, hi = _intervals_for_kind(kind, o_loc, d_loc, g["params"][None, :, :])
            h = (lo <= hi) & (hi > t_min) & (lo < t_max[:, None])
            if exclude is not None:
                h &= ~exclude[:, g["index"]]
            hit |= h.any(axis=1)
        return hit

    def bounding_radii(self, kind: str) -> np.ndarray:
        """Conservative world-space bounding-sphere radius per solid of a kind."""
        g = self.by_kind[kind]
        params = g["params"]
        if kind == "sphere":
            local = params[:, 0]
        elif kind == "box":
            local = np.linalg.norm(params[:, :3], axis=1)
        else:  # capsule, cylinder
            local = np.sqrt(params[:, 0] ** 2 + params[:, 1] ** 2) + (
                params[:, 1] if kind == "capsule" else 0.0
            )
        sigma = np.array([np.linalg.norm(self.solids[i].M, ord=2) for i in g["index"]])
        return local * sigma


def oracle_occluded(
    solidset: SolidSet,
    origins: np.ndarray,
    dirs: np.ndarray,
    t_max: np.ndarray,
    exclude: np.ndarray | None = None,
    n_samples: int = 1000,
) -> np.ndarray:
    """Brute-force occlusion by dense sampling along each ray against every solid.

    Evaluates the signed distance at n_samples points in (0, t_max) per
    (ray, solid) pair and takes the minimum's sign; brackets whose sampled
    minimum is within one Lipschitz step of zero are refined by golden-section
    search so grazing hits are not lost to the sampling grid. A conservative
    bounding-sphere prefilter skips pairs that provably cannot intersect.
    """
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    R = origins.shape[0]
    t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (R,)).astype(float)
    out = np.zeros(R, dtype=bool)
    frac = (np.arange(n_samples) + 0.5) / n_samples
    dn = np.linalg.norm(dirs, axis=1)

    for kind, g in solidset.by_kind.items():
        S = len(g["index"])
        # Segment-to-center distance prefilter.
        centers = g["t"]
        rel = centers[None, :, :] - origins[:, None, :]
        proj = np.einsum("rsk,rk->rs", rel, dirs) / (dn**2)[:, None]
        proj = np.clip(proj, 0.0, t_max[:, None])
        closest = origins[:, None, :] + proj[..., None] * dirs[:, None, :]
        seg_dist = np.linalg.norm(centers[None, :, :] - closest, axis=-1)
        bounds = solidset.bounding_radii(kind)
        candidate = seg_dist <= bounds[None, :] + 1e-9
        if exclude is not None:
            candidate &= ~exclude[:, g["index"]]
        ray_idx, sol_idx = np.nonzero(candidate)
        if ray_idx.size == 0:
            continue
        sigma_inv = np.array(
            [np.linalg.norm(solidset.solids[i].Minv, ord=2) for i in g["index"]]
        )
        for start in range(0, ray_idx.size, 256):
            ri = ray_idx[start : start + 256]
            si = sol_idx[start : start + 256]
            ts = frac[None, :] * t_max[ri][:, None]  # (P, N)
            pts = origins[ri][:, None, :] + ts[..., None] * dirs[ri][:, None, :]
            local = np.einsum(
                "pij,pnj->pni", g["Minv"][si], pts - g["t"][si][:, None, :]
            )
            vals = _sdf_for_kind(kind, local, g["params"][si][:, None, :])  # (P, N)
            vmin = vals.min(axis=1)
            neg = vmin < 0.0
            out[ri[neg]] = True
            # Local-space distance one sampling step can hide.
            step = (t_max[ri] / n_samples) * dn[ri] * sigma_inv[si]
            suspicious = ~neg & ~out[ri] & (vmin < 1.5 * step)
            for p in np.nonzero(suspicious)[0]:
                gidx = si[p]
                # Refine every bracket that dips within one step of zero, with
                # the ray's (0, t_max) boundaries included, so grazes cut off
                # by t_max are not lost.
                low = np.nonzero(vals[p] < 1.5 * step[p])[0]
                brackets = []
                start = prev = int(low[0])
                for i in low[1:]:
                    if i == prev + 1:
                        prev = int(i)
                    else:
                        brackets.append((start, prev))
                        start = prev = int(i)
                brackets.append((start, prev))
                for b0, b1 in brackets:
                    lo_t = ts[p, b0 - 1] if b0 > 0 else 0.0
                    hi_t = ts[p, b1 + 1] if b1 < n_samples - 1 else t_max[ri[p]]
                    if _refined_min_negative(
                        origins[ri[p]], dirs[ri[p]], lo_t, hi_t,
                        kind, g["Minv"][gidx], g["t"][gidx], g["params"][gidx],
                    ):
                        out[ri[p]] = True
                        break
    return out


def _refined_min_negative(o, d, lo, hi, kind, Minv, t, params) -> bool:
    """Does the local SDF dip below zero along the ray segment [lo, hi]?

    Fine linear sub-sampling first (no unimodality assumption), then
    golden-section around the best sub-bracket.
    """
    ts = np.linspace(lo, hi, 65)
    pts = o[None, :] + ts[:, None] * d[None, :]
    local = (pts - t) @ Minv.T
    vals = _sdf_for_kind(kind, local, params[None, :])
    if (vals < 0.0).any():
        return True
    i0 = int(np.argmin(vals))
    a = ts[max(i0 - 1, 0)]
    b = ts[min(i0 + 1, len(ts) - 1)]

    gr = (np.sqrt(5.0) - 1.0) / 2.0

    def f(tt):
        p = Minv @ (o + tt * d - t)
        return float(_sdf_for_kind(kind, p[None, :], params[None, :])[0])

    c = b - gr * (b - a)
    e = a + gr * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(60):
        if fc < 0.0 or fe < 0.0:
            return True
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - gr * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + gr * (b - a)
            fe = f(e)
    return min(fc, fe) < 0.0


# ---------------------------------------------------------------------------
# Surface sampling (silhouettes, debug rendering)


@lru_cache(maxsize=32)
def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    out = np.column_stack(
        [np.sin(phi) * np.cos(theta), np.cos(phi), np.sin(phi) * np.sin(theta)]
    )
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _ring_unit(n: int) -> np.ndarray:
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    out = np.column_stack([np.cos(th), np.zeros(n), np.sin(th)])
    out.setflags(write=False)
    return out


def _ring(n: int, y: float, r: float) -> np.ndarray:
    p = _ring_unit(n) * r
    p = p.copy()
    p[:, 1] = y
    return p


@lru_cache(maxsize=32)
def _capsule_template(n_fib: int):
    caps = _fibonacci_sphere(n_fib)
    top = caps[:, 1] > 0
    ring = _ring_unit(8)
    return caps, top, ring


def surface_points(solid: Solid, n: int = 64) -> np.ndarray:
    """About n deterministic points on the solid's world surface.

    Sample sets are chosen so their convex hull covers the primitive's axis
    and extremities, which is what the silhouette bounding box relies on.
    """
    kind = solid.kind
    if kind == "sphere":
        local = _fibonacci_sphere(n) * solid.params[0]
    elif kind == "box":
        dirs = _fibonacci_sphere(n)
        h = np.asarray(solid.params)
        scale = 1.0 / np.max(np.abs(dirs) / h, axis=1)
        local = dirs * scale[:, None]
    elif kind == "capsule":
        half_h, r = solid.params
        caps_u, top, ring_u = _capsule_template(max(n - 24, 8))
        caps = caps_u * r
        caps[:, 1] += np.where(top, half_h, -half_h)
        rings = np.concatenate([ring_u * r] * 3)
        m = len(ring_u)
        rings[:m, 1] = -half_h
        rings[2 * m :, 1] = half_h
        local = np.concatenate([caps, rings])
    elif kind == "cylinder":
        half_h, r = solid.params
        m = max(n // 3 - 1, 4)
        local = np.vstack(
            [
                _ring(m, -half_h, r),
                _ring(m, 0.0, r),
                _ring(m, half_h, r),
                [[0.0, -half_h, 0.0], [0.0, half_h, 0.0]],
            ]
        )
    else:
        raise ValueError(f"unknown solid kind {kind!r}")
    return local @ solid.M.T + solid.t


def point_in_solid(solid: Solid, points: np.ndarray) -> np.ndarray:
    """Inside test for world points (sign of the local SDF)."""
    local = (np.atleast_2d(points) - solid.t) @ solid.Minv.T
    return _sdf_for_kind(solid.kind, local, np.asarray(solid.params)[None, :]) <= 0.0
