"""Marching cubes over a scalar lattice with shared vertices per grid edge.

Vertices are created once per crossing grid edge (keyed by the edge's lattice
coordinates), so the output surface is watertight for closed isosurfaces that
stay inside the lattice. Cubes sit between adjacent lattice points; grid
values are sampled at cell centers of [-1, 1]^3.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .mc_tables import EDGE_AXIS, EDGE_OFFSET, EDGE_TABLE, TRI_COUNT, TRI_FLAT, TRI_START
from .mesh import Mesh, empty_mesh


def lattice_coords(resolution: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Cell-center coordinates along one axis."""
    step = (hi - lo) / resolution
    return lo + (np.arange(resolution) + 0.5) * step


def marching_cubes(values: np.ndarray, iso: float = 0.5,
                   lo: float = -1.0, hi: float = 1.0) -> Mesh:
    """Extract the iso-surface of values (R, R, R); inside means value > iso."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or len(set(values.shape)) != 1:
        raise ValueError(f"expected a cubic (R, R, R) grid, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("grid contains non-finite values")
    res = values.shape[0]
    inside = values > iso

    # case index per cube from the 8 corner bits
    case = np.zeros((res - 1, res - 1, res - 1), dtype=np.int32)
    for bit, (dx, dy, dz) in enumerate([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                                        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]):
        corner = inside[dx:dx + res - 1, dy:dy + res - 1, dz:dz + res - 1]
        case |= corner.astype(np.int32) << bit

    crossing = EDGE_TABLE[case]
    act = np.argwhere(crossing != 0)
    if len(act) == 0:
        return empty_mesh()
    act_cases = case[act[:, 0], act[:, 1], act[:, 2]]
    act_masks = crossing[act[:, 0], act[:, 1], act[:, 2]]

    # mark every grid edge that carries a vertex
    used = np.zeros((res, res, res, 3), dtype=bool)
    for e in range(12):
        sel = (act_masks & (1 << e)) != 0
        if not sel.any():
            continue
        pos = act[sel] + EDGE_OFFSET[e]
        used[pos[:, 0], pos[:, 1], pos[:, 2], EDGE_AXIS[e]] = True

    vert_id = np.full(res * res * res * 3, -1, dtype=np.int64)
    flat_used = used.reshape(-1)
    vert_id[flat_used] = np.arange(int(flat_used.sum()))

    # interpolate vertex positions along each axis
    coords = lattice_coords(res, lo, hi)
    vertices = np.empty((int(flat_used.sum()), 3), dtype=np.float64)
    for axis in range(3):
        sel = np.argwhere(used[..., axis])
        if len(sel) == 0:
            continue
        i, j, k = sel[:, 0], sel[:, 1], sel[:, 2]
        nxt = sel.copy()
        nxt[:, axis] += 1
        va = values[i, j, k]
        vb = values[nxt[:, 0], nxt[:, 1], nxt[:, 2]]
        t = (iso - va) / (vb - va)
        pts = np.stack([coords[i], coords[j], coords[k]], axis=1)
        pts[:, axis] += t * (coords[1] - coords[0])
        ids = vert_id[(sel[:, 0] * res + sel[:, 1]) * res * 3 + sel[:, 2] * 3 + axis]
        vertices[ids] = pts

    tris = kernels.emit_triangles(np.ascontiguousarray(act), act_cases.astype(np.int64),
                                  TRI_FLAT, TRI_START, TRI_COUNT, EDGE_AXIS,
                                  np.ascontiguousarray(EDGE_OFFSET), vert_id, res)
    # orient outward for inside = value > iso
    tris = tris[:, ::-1]

    # drop slivers where the iso level passes exactly through a corner
    v = vertices
    degenerate = ((v[tris[:, 0]] == v[tris[:, 1]]).all(axis=1)
                  | (v[tris[:, 1]] == v[tris[:, 2]]).all(axis=1)
                  | (v[tris[:, 0]] == v[tris[:, 2]]).all(axis=1))
    if degenerate.any():
        tris = tris[~degenerate]
    return Mesh(vertices, np.ascontiguousarray(tris))
