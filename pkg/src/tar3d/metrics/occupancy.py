"""Occupancy grids over the [-1, 1]^3 lattice and the volumetric IoU score."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..runtime import worker_count
from .marching import lattice_coords


@dataclass
class OccupancyGrid:
    values: np.ndarray  # (R, R, R) float32 in [0, 1]

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


def lattice_points(resolution: int) -> np.ndarray:
    """(R^3, 3) cell-center query points in z-fastest (C) order."""
    c = lattice_coords(resolution)
    gx, gy, gz = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3).astype(np.float32)


def occupancy_grid(decode_fn, z_q, resolution: int, batch: int = 16384) -> OccupancyGrid:
    """Evaluate decode_fn(z_q, points) -> logits over the lattice; sigmoid to [0, 1].

    Slabs of the lattice are evaluated in parallel when TAR3D_THREADS allows;
    results are assembled by index so the grid is identical either way.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    pts = lattice_points(resolution)
    out = np.empty(len(pts), dtype=np.float32)
    spans = [(lo, min(len(pts), lo + batch)) for lo in range(0, len(pts), batch)]

    def run(span):
        lo, hi = span
        logits = np.asarray(decode_fn(z_q, pts[lo:hi]), dtype=np.float64)
        out[lo:hi] = 1.0 / (1.0 + np.exp(-logits))

    workers = worker_count()
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return OccupancyGrid(values=out.reshape(resolution, resolution, resolution))


def analytic_occupancy_grid(spec, resolution: int) -> OccupancyGrid:
    """Ground-truth 0/1 grid from a shape spec's signed distance."""
    from ..shapes.sdf import occupancy_labels
    pts = lattice_points(resolution)
    occ = occupancy_labels(spec, pts).astype(np.float32)
    return OccupancyGrid(values=occ.reshape(resolution, resolution, resolution))


def iou(grid_a: OccupancyGrid, grid_b: OccupancyGrid, iso: float = 0.5) -> float:
    """Intersection over union of thresholded voxels; 1.0 when both are empty."""
    if grid_a.resolution != grid_b.resolution:
        raise ValueError(f"resolution mismatch: {grid_a.resolution} vs {grid_b.resolution}")
    a = grid_a.values > iso
    b = grid_b.values > iso
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
