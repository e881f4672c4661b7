"""Surface and query-point sampling against analytic shape specs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sdf import CLASS_BOX, CLASS_SPHERE, Member, ShapeSpec, occupancy_labels, sdf_values, surface_normals


@dataclass
class PointCloudSample:
    points: np.ndarray   # (N, 3) float32 in [-1, 1]
    normals: np.ndarray  # (N, 3) float32 unit vectors


@dataclass
class QuerySet:
    points: np.ndarray     # (M, 3) float32
    occupancy: np.ndarray  # (M,) uint8, 1 = inside


def _sample_member_surface(m: Member, n: int, rng: np.random.Generator) -> np.ndarray:
    if m.kind == CLASS_SPHERE:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = v * m.params[0]
    elif m.kind == CLASS_BOX:
        hx, hy, hz = m.params[:3]
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.empty((n, 3))
        half = np.array([hx, hy, hz])
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        for a in range(3):
            sel = axis == a
            other = [b for b in range(3) if b != a]
            pts[sel, a] = sign[sel] * half[a]
            pts[sel, other[0]] = uv[sel, 0] * half[other[0]]
            pts[sel, other[1]] = uv[sel, 1] * half[other[1]]
    else:
        R, r = m.params[:2]
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        # area element ~ (R + r cos phi): rejection against the max
        phi = np.empty(n)
        filled = 0
        while filled < n:
            cand = rng.uniform(-np.pi, np.pi, size=2 * (n - filled))
            accept = rng.uniform(0.0, 1.0, size=cand.size) < (R + r * np.cos(cand)) / (R + r)
            take = cand[accept][: n - filled]
            phi[filled:filled + take.size] = take
            filled += take.size
        ring = R + r * np.cos(phi)
        pts = np.stack([ring * np.cos(theta), ring * np.sin(theta), r * np.sin(phi)], axis=1)
    return pts + np.asarray(m.offset)


def sample_surface(spec: ShapeSpec, n: int, seed) -> PointCloudSample:
    """n area-uniform surface points with unit normals from the analytic SDF."""
    if n < 1:
        raise ValueError("sample_surface: n must be >= 1")
    areas = np.array([m.area() for m in spec.members])
    if areas.sum() <= 0:
        raise ValueError("sample_surface: degenerate spec with zero-measure surface")
    rng = np.random.default_rng(seed)
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        want = n - filled
        batch = max(want + 16, int(want * 1.3))
        member_idx = rng.choice(len(spec.members), size=batch, p=areas / areas.sum())
        cand = np.empty((batch, 3))
        for mi in range(len(spec.members)):
            sel = member_idx == mi
            if sel.any():
                cand[sel] = _sample_member_surface(spec.members[mi], int(sel.sum()), rng)
        # drop member-surface points hidden inside the union
        keep = cand[sdf_values(spec, cand) > -1e-7][:want]
        pts[filled:filled + len(keep)] = keep
        filled += len(keep)
    normals = surface_normals(spec, pts)
    return PointCloudSample(points=pts.astype(np.float32), normals=normals.astype(np.float32))


def sample_query_points(spec: ShapeSpec, n_uniform: int, n_near: int, sigma: float, seed) -> QuerySet:
    """Uniform cube points plus near-surface Gaussian-jittered points, with exact labels."""
    if n_uniform < 0 or n_near < 0:
        raise ValueError("query counts must be >= 0")
    rng = np.random.default_rng(seed)
    parts = []
    if n_uniform:
        parts.append(rng.uniform(-1.0, 1.0, size=(n_uniform, 3)))
    if n_near:
        base = sample_surface(spec, n_near, rng.integers(0, 2**63 - 1)).points.astype(np.float64)
        near = base + rng.normal(0.0, sigma, size=(n_near, 3))
        parts.append(np.clip(near, -1.0, 1.0))
    if not parts:
        return QuerySet(points=np.zeros((0, 3), dtype=np.float32),
                        occupancy=np.zeros((0,), dtype=np.uint8))
    # label the stored float32 coordinates so labels stay exact after round-trips
    pts = np.concatenate(parts, axis=0).astype(np.float32)
    return QuerySet(points=pts, occupancy=occupancy_labels(spec, pts))
