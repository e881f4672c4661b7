"""Process-wide runtime switches read from the environment.

TAR3D_THREADS caps worker counts for parallel sections (dataset generation,
occupancy-grid slabs). TAR3D_NUMBA selects the kernel path: unset or "1" uses
the numba JIT kernels when numba imports, "0" forces the pure-numpy fallbacks.
"""

from __future__ import annotations

import os


def worker_count() -> int:
    raw = os.environ.get("TAR3D_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            n = 1
        return max(1, n)
    return max(1, min(8, os.cpu_count() or 1))


def numba_requested() -> bool:
    return os.environ.get("TAR3D_NUMBA", "1").strip() != "0"
