"""Hot numeric kernels: numba @njit with pure-numpy fallbacks.

Each public function dispatches on the TAR3D_NUMBA env flag (see runtime).
Both paths compute identical results; benchmarks/bench_kernels.py compares
them. Everything here is pure and thread-safe.
"""

from __future__ import annotations

import numpy as np

from .runtime import numba_requested

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    _HAS_NUMBA = False

    def njit(*args, **kwargs):
        def dec(f):
            return f
        return dec if not args or not callable(args[0]) else args[0]


def use_numba() -> bool:
    return _HAS_NUMBA and numba_requested()


# -- codebook nearest neighbor ------------------------------------------------


@njit(cache=True)
def _nearest_code_numba(z, entries):
    m, d = z.shape
    k = entries.shape[0]
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        best = np.inf
        best_j = 0
        for j in range(k):
            acc = 0.0
            for c in range(d):
                diff = z[i, c] - entries[j, c]
                acc += diff * diff
            if acc < best:
                best = acc
                best_j = j
        out[i] = best_j
    return out


def _nearest_code_numpy(z, entries):
    # chunk rows so the (chunk, K) distance matrix stays small; accumulate the
    # squared distance channel by channel so the float result matches the
    # sequential arithmetic of the numba path bit for bit
    m, d = z.shape
    out = np.empty(m, dtype=np.int64)
    step = max(1, 2_000_000 // max(1, entries.shape[0]))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        d2 = np.zeros((hi - lo, entries.shape[0]))
        for c in range(d):
            diff = z[lo:hi, c, None] - entries[None, :, c]
            d2 += diff * diff
        out[lo:hi] = np.argmin(d2, axis=1)
    return out


def nearest_code(z: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the L2-nearest codebook row per input row; ties -> smallest index."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    entries = np.ascontiguousarray(entries, dtype=np.float64)
    if use_numba():
        return _nearest_code_numba(z, entries)
    return _nearest_code_numpy(z, entries)


# -- nearest-neighbor distances between point sets ------------------------------

# Uniform spatial hash over the reference set; query cells are visited in
# expanding Chebyshev rings until the ring lower bound exceeds the best hit.


def _build_grid(ref: np.ndarray, res: int):
    lo = ref.min(axis=0)
    hi = ref.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    cell = span / res
    idx = np.minimum((ref - lo) / cell, res - 1).astype(np.int64)
    lin = (idx[:, 0] * res + idx[:, 1]) * res + idx[:, 2]
    order = np.argsort(lin, kind="stable")
    sorted_lin = lin[order]
    starts = np.searchsorted(sorted_lin, np.arange(res**3))
    ends = np.searchsorted(sorted_lin, np.arange(res**3), side="right")
    return lo, cell, order.astype(np.int64), starts.astype(np.int64), ends.astype(np.int64)


@njit(cache=True)
def _grid_nn_numba(q, ref, lo, cell, order, starts, ends, res):
    n = q.shape[0]
    out = np.empty(n, dtype=np.float64)
    min_cell = min(cell[0], min(cell[1], cell[2]))
    for i in range(n):
        ci = int((q[i, 0] - lo[0]) / cell[0])
        cj = int((q[i, 1] - lo[1]) / cell[1])
        ck = int((q[i, 2] - lo[2]) / cell[2])
        if ci < 0:
            ci = 0
        elif ci >= res:
            ci = res - 1
        if cj < 0:
            cj = 0
        elif cj >= res:
            cj = res - 1
        if ck < 0:
            ck = 0
        elif ck >= res:
            ck = res - 1
        best = np.inf
        ring = 0
        while ring < 2 * res:
            # cells whose Chebyshev distance from the query cell equals ring
            found_cell = False
            for a in range(max(0, ci - ring), min(res, ci + ring + 1)):
                for b in range(max(0, cj - ring), min(res, cj + ring + 1)):
                    for c in range(max(0, ck - ring), min(res, ck + ring + 1)):
                        if max(abs(a - ci), max(abs(b - cj), abs(c - ck))) != ring:
                            continue
                        found_cell = True
                        linc = (a * res + b) * res + c
                        for t in range(starts[linc], ends[linc]):
                            j = order[t]
                            dx = q[i, 0] - ref[j, 0]
                            dy = q[i, 1] - ref[j, 1]
                            dz = q[i, 2] - ref[j, 2]
                            d2 = dx * dx + dy * dy + dz * dz
                            if d2 < best:
                                best = d2
            # any point in a farther ring is at least (ring)*min_cell away
            if best < np.inf and (ring * min_cell) ** 2 > best:
                break
            if not found_cell and best < np.inf:
                break
            ring += 1
        out[i] = np.sqrt(best)
    return out


def _brute_nn_numpy(q: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # channel-sequential squared distances: bit-identical to the grid kernel
    n = q.shape[0]
    out = np.empty(n, dtype=np.float64)
    step = max(1, 8_000_000 // max(1, ref.shape[0]))
    for s in range(0, n, step):
        e = min(n, s + step)
        dx = q[s:e, 0, None] - ref[None, :, 0]
        dy = q[s:e, 1, None] - ref[None, :, 1]
        dz = q[s:e, 2, None] - ref[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        out[s:e] = np.sqrt(d2.min(axis=1))
    return out


def nn_distances(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Euclidean distance from each query point to its nearest reference point."""
    query = np.ascontiguousarray(query, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    if ref.shape[0] == 0:
        raise ValueError("nn_distances: empty reference set")
    if use_numba() and ref.shape[0] >= 32:
        res = int(max(2, min(48, round(ref.shape[0] ** (1.0 / 3.0)))))
        lo, cell, order, starts, ends = _build_grid(ref, res)
        return _grid_nn_numba(query, ref, lo, cell, order, starts, ends, res)
    return _brute_nn_numpy(query, ref)


def nn_distances_brute(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Brute-force oracle with the same per-pair arithmetic as the grid path."""
    return _brute_nn_numpy(np.asarray(query, dtype=np.float64),
                           np.asarray(ref, dtype=np.float64))


# -- marching cubes triangle emission -------------------------------------------

# The loop over active cubes; tables and orchestration live in metrics.marching.


@njit(cache=True)
def _emit_triangles_numba(active, cases, tri_flat, tri_start, tri_count,
                          edge_axis, edge_off, vert_id, res):
    total = 0
    for n in range(active.shape[0]):
        total += tri_count[cases[n]]
    tris = np.empty((total, 3), dtype=np.int64)
    t = 0
    for n in range(active.shape[0]):
        ci = cases[n]
        i = active[n, 0]
        j = active[n, 1]
        k = active[n, 2]
        for m in range(tri_count[ci]):
            base = tri_start[ci] + 3 * m
            for c in range(3):
                e = tri_flat[base + c]
                ei = i + edge_off[e, 0]
                ej = j + edge_off[e, 1]
                ek = k + edge_off[e, 2]
                lin = ((ei * res + ej) * res + ek) * 3 + edge_axis[e]
                tris[t, c] = vert_id[lin]
            t += 1
    return tris


def _emit_triangles_numpy(active, cases, tri_flat, tri_start, tri_count,
                          edge_axis, edge_off, vert_id, res):
    counts = tri_count[cases]
    total = int(counts.sum())
    tris = np.empty((total, 3), dtype=np.int64)
    t = 0
    for n in range(active.shape[0]):
        ci = cases[n]
        i, j, k = active[n]
        base = tri_start[ci]
        for m in range(tri_count[ci]):
            row = tri_flat[base + 3 * m:base + 3 * m + 3]
            ei = i + edge_off[row, 0]
            ej = j + edge_off[row, 1]
            ek = k + edge_off[row, 2]
            lin = ((ei * res + ej) * res + ek) * 3 + edge_axis[row]
            tris[t] = vert_id[lin]
            t += 1
    return tris


def emit_triangles(active, cases, tri_flat, tri_start, tri_count,
                   edge_axis, edge_off, vert_id, res) -> np.ndarray:
    if use_numba():
        return _emit_triangles_numba(active, cases, tri_flat, tri_start, tri_count,
                                     edge_axis, edge_off, vert_id, res)
    return _emit_triangles_numpy(active, cases, tri_flat, tri_start, tri_count,
                                 edge_axis, edge_off, vert_id, res)
