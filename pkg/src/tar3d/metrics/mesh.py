"""Triangle mesh container with OBJ/PLY export and topology checks."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64 vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index exceeds vertex count")

    def is_empty(self) -> bool:
        return len(self.triangles) == 0


def empty_mesh() -> Mesh:
    return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def triangle_areas(mesh: Mesh) -> np.ndarray:
    v = mesh.vertices
    t = mesh.triangles
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def is_watertight(mesh: Mesh) -> bool:
    """Every undirected edge is shared by exactly two triangles."""
    if mesh.is_empty():
        return False
    t = mesh.triangles
    edges = np.concatenate([t[:, (0, 1)], t[:, (1, 2)], t[:, (2, 0)]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts == 2).all())


# -- export / import ---------------------------------------------------------


def save_obj(path, mesh: Mesh):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_obj(path) -> Mesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return Mesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def save_ply(path, mesh: Mesh):
    """Binary little-endian PLY."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {len(mesh.triangles)}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        for t in mesh.triangles:
            fh.write(struct.pack("<B3i", 3, int(t[0]), int(t[1]), int(t[2])))


def load_ply(path) -> Mesh:
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    n_vert = n_face = 0
    for line in header:
        if line.startswith("element vertex"):
            n_vert = int(line.split()[-1])
        elif line.startswith("element face"):
            n_face = int(line.split()[-1])
    off = end
    verts = np.frombuffer(raw, dtype="<f4", count=n_vert * 3, offset=off).reshape(n_vert, 3)
    off += n_vert * 12
    tris = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        cnt = raw[off]
        if cnt != 3:
            raise IOError("only triangle faces supported")
        tris[i] = struct.unpack_from("<3i", raw, off + 1)
        off += 13
    return Mesh(verts.astype(np.float64), tris)
