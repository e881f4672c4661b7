"""Point-set geometry metrics: chamfer distance and F-score, plus mesh sampling."""

from __future__ import annotations

import numpy as np

from .. import kernels
from .mesh import Mesh, triangle_areas


def sample_mesh_surface(mesh: Mesh, n: int, seed) -> np.ndarray:
    """n area-uniform surface points: weighted triangle choice + barycentric draw."""
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1.0
    u = np.where(flip, 1.0 - u, u)
    v = np.where(flip, 1.0 - v, v)
    t = mesh.triangles[tri]
    a = mesh.vertices[t[:, 0]]
    b = mesh.vertices[t[:, 1]]
    c = mesh.vertices[t[:, 2]]
    return a + u * (b - a) + v * (c - a)


def chamfer(a: np.ndarray, b: np.ndarray, squared: bool = False) -> float:
    """0.5 * (mean nearest distance A->B + mean nearest distance B->A).

    squared=True averages squared distances instead (for comparability with
    codebases that report the squared variant).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs two non-empty point sets")
    d_ab = kernels.nn_distances(a, b)
    d_ba = kernels.nn_distances(b, a)
    if squared:
        return float(0.5 * ((d_ab**2).mean() + (d_ba**2).mean()))
    return float(0.5 * (d_ab.mean() + d_ba.mean()))


def fscore(a: np.ndarray, b: np.ndarray, tau: float = 0.02) -> float:
    """F-score at threshold tau: harmonic mean of precision and recall."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("fscore needs two non-empty point sets")
    precision = float((kernels.nn_distances(a, b) <= tau).mean())
    recall = float((kernels.nn_distances(b, a) <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
