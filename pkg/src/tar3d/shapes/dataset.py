"""Binary shape dataset: fixed-size records plus a key=value manifest.

File layout (little-endian):
    magic    8 bytes  b"T3DDATA\\0"
    version  u32
    classes  u32, per_class u32, n_points u32, n_uniform u32, n_near u32
    sigma    f32
    seed     u64
    count    u32
    records  count * record_bytes

Each record: spec block (class_id u8, n_members u8, 3 member slots of
kind u8 + 4 param f32 + 3 offset f32), then points+normals (n_points x 6 f32),
query points (M x 3 f32) and occupancy labels (M u8) with M = n_uniform + n_near.
Generation is deterministic per (seed, record index), so regeneration with the
same config is byte-identical regardless of worker count.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..runtime import worker_count
from .sampling import PointCloudSample, QuerySet, sample_query_points, sample_surface
from .sdf import Member, ShapeSpec, random_spec

MAGIC = b"T3DDATA\0"
VERSION = 1
_SPEC_BYTES = 2 + 3 * (1 + 4 * 4 + 3 * 4)


@dataclass
class Record:
    spec: ShapeSpec
    cloud: PointCloudSample
    queries: QuerySet


def _pack_spec(spec: ShapeSpec) -> bytes:
    out = struct.pack("<BB", spec.class_id, len(spec.members))
    for i in range(3):
        if i < len(spec.members):
            m = spec.members[i]
            params = tuple(m.params) + (0.0,) * (4 - len(m.params))
            out += struct.pack("<B4f3f", m.kind, *params, *m.offset)
        else:
            out += struct.pack("<B4f3f", 0, 0, 0, 0, 0, 0, 0, 0)
    return out


def _unpack_spec(raw: bytes) -> ShapeSpec:
    class_id, n_members = struct.unpack_from("<BB", raw, 0)
    members = []
    for i in range(n_members):
        vals = struct.unpack_from("<B4f3f", raw, 2 + i * 29)
        kind = vals[0]
        n_params = {0: 1, 1: 3, 2: 2}[kind]
        members.append(Member(kind, tuple(vals[1:1 + n_params]), tuple(vals[5:8])))
    return ShapeSpec(class_id, tuple(members))


def record_bytes(n_points: int, n_queries: int) -> int:
    return _SPEC_BYTES + n_points * 6 * 4 + n_queries * 3 * 4 + n_queries


def build_dataset(path, classes: int, per_class: int, n_points: int,
                  n_uniform: int, n_near: int, sigma: float, seed: int) -> dict:
    """Generate the dataset file and its manifest; returns the manifest dict."""
    if classes < 1:
        raise ValueError("classes must be >= 1")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = classes * per_class

    def make(idx: int) -> bytes:
        class_id = idx // per_class
        ss = np.random.SeedSequence((seed, idx))
        r_spec, r_cloud, r_query = [np.random.default_rng(s) for s in ss.spawn(3)]
        spec = random_spec(class_id, r_spec)
        assert spec.fits_cube(), f"generated spec escapes the cube: {spec}"
        cloud = sample_surface(spec, n_points, r_cloud)
        queries = sample_query_points(spec, n_uniform, n_near, sigma, r_query)
        blob = _pack_spec(spec)
        blob += np.concatenate([cloud.points, cloud.normals], axis=1).astype("<f4").tobytes()
        blob += queries.points.astype("<f4").tobytes()
        blob += queries.occupancy.astype(np.uint8).tobytes()
        return blob

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        blobs = list(pool.map(make, range(count)))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIII", VERSION, classes, per_class, n_points, n_uniform, n_near))
        fh.write(struct.pack("<fQI", sigma, seed, count))
        for blob in blobs:
            fh.write(blob)

    manifest = {
        "classes": classes,
        "per_class": per_class,
        "count": count,
        "n_points": n_points,
        "n_uniform": n_uniform,
        "n_near": n_near,
        "sigma": sigma,
        "seed": seed,
    }
    for c in range(classes):
        manifest[f"class_{c}_count"] = per_class
    mpath = path.with_suffix(".manifest")
    with open(mpath, "w") as fh:
        for k, v in manifest.items():
            fh.write(f"{k}={v}\n")
    return manifest


class Dataset:
    """Random access reader over a dataset file (whole file held in memory)."""

    def __init__(self, path):
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise IOError(f"{path}: not a dataset file")
        (version, self.classes, self.per_class, self.n_points,
         self.n_uniform, self.n_near) = struct.unpack_from("<IIIIII", raw, 8)
        if version != VERSION:
            raise IOError(f"{path}: unsupported version {version}")
        self.sigma, self.seed, self.count = struct.unpack_from("<fQI", raw, 32)
        self._raw = raw
        self._base = 48
        self._rec = record_bytes(self.n_points, self.n_uniform + self.n_near)
        if self._base + self.count * self._rec != len(raw):
            raise IOError(f"{path}: truncated ({len(raw)} bytes)")

    def __len__(self) -> int:
        return self.count

    def class_of(self, idx: int) -> int:
        return idx // self.per_class

    def spec(self, idx: int) -> ShapeSpec:
        off = self._base + idx * self._rec
        return _unpack_spec(self._raw[off:off + _SPEC_BYTES])

    def __getitem__(self, idx: int) -> Record:
        if not 0 <= idx < self.count:
            raise IndexError(idx)
        off = self._base + idx * self._rec
        spec = _unpack_spec(self._raw[off:off + _SPEC_BYTES])
        off += _SPEC_BYTES
        pn = np.frombuffer(self._raw, dtype="<f4", count=self.n_points * 6, offset=off)
        pn = pn.reshape(self.n_points, 6)
        off += self.n_points * 6 * 4
        m = self.n_uniform + self.n_near
        qp = np.frombuffer(self._raw, dtype="<f4", count=m * 3, offset=off).reshape(m, 3)
        off += m * 3 * 4
        occ = np.frombuffer(self._raw, dtype=np.uint8, count=m, offset=off)
        return Record(
            spec=spec,
            cloud=PointCloudSample(points=pn[:, :3].copy(), normals=pn[:, 3:].copy()),
            queries=QuerySet(points=qp.copy(), occupancy=occ.copy()),
        )

    def points_with_normals(self, idx: int) -> np.ndarray:
        rec = self[idx]
        return np.concatenate([rec.cloud.points, rec.cloud.normals], axis=1)


def load_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
