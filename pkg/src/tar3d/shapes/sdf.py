"""Procedural shape family with analytic signed distances.

A ShapeSpec is one primitive (sphere, box, torus) or a union of up to three
offset primitives; the union SDF is the member minimum. Everything lives in
the normalized cube: specs are generated to fit inside [-0.9, 0.9]^3 and the
occupancy convention is inside <=> SDF <= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLASS_SPHERE = 0
CLASS_BOX = 1
CLASS_TORUS = 2
CLASS_UNION = 3

CLASS_NAMES = {CLASS_SPHERE: "sphere", CLASS_BOX: "box", CLASS_TORUS: "torus", CLASS_UNION: "union"}

_FIT_LIMIT = 0.9


@dataclass(frozen=True)
class Member:
    kind: int                      # CLASS_SPHERE / CLASS_BOX / CLASS_TORUS
    params: tuple                  # sphere: (r,); box: (hx, hy, hz); torus: (R, r)
    offset: tuple = (0.0, 0.0, 0.0)

    def bound(self) -> float:
        if self.kind == CLASS_SPHERE:
            return self.params[0]
        if self.kind == CLASS_BOX:
            return float(np.sqrt(np.sum(np.square(self.params[:3]))))
        return self.params[0] + self.params[1]

    def area(self) -> float:
        if self.kind == CLASS_SPHERE:
            return 4.0 * np.pi * self.params[0] ** 2
        if self.kind == CLASS_BOX:
            hx, hy, hz = self.params[:3]
            return 8.0 * (hx * hy + hy * hz + hx * hz)
        R, r = self.params[:2]
        return 4.0 * np.pi**2 * R * r


@dataclass(frozen=True)
class ShapeSpec:
    class_id: int
    members: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.members:
            raise ValueError("ShapeSpec needs at least one member")

    def fits_cube(self) -> bool:
        """Dataset shapes must fit inside [-0.9, 0.9]^3 (conservative bound)."""
        return all(m.bound() + max(abs(o) for o in m.offset) <= _FIT_LIMIT + 1e-6
                   for m in self.members)


def _member_sdf(m: Member, pts: np.ndarray) -> np.ndarray:
    p = pts - np.asarray(m.offset, dtype=pts.dtype)
    if m.kind == CLASS_SPHERE:
        return np.linalg.norm(p, axis=-1) - m.params[0]
    if m.kind == CLASS_BOX:
        q = np.abs(p) - np.asarray(m.params[:3], dtype=pts.dtype)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside
    R, r = m.params[:2]
    ring = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2) - R
    return np.sqrt(ring**2 + p[..., 2] ** 2) - r


def sdf_values(spec: ShapeSpec, pts: np.ndarray) -> np.ndarray:
    """Signed distance at pts (..., 3); union takes the member minimum."""
    pts = np.asarray(pts, dtype=np.float64)
    vals = _member_sdf(spec.members[0], pts)
    for m in spec.members[1:]:
        vals = np.minimum(vals, _member_sdf(m, pts))
    return vals


def sdf_eval(spec: ShapeSpec, p) -> float:
    """Signed distance at one 3-vector; negative inside."""
    return float(sdf_values(spec, np.asarray(p, dtype=np.float64)[None, :])[0])


def occupancy_labels(spec: ShapeSpec, pts: np.ndarray) -> np.ndarray:
    """Binary inside labels: 1 where SDF <= 0."""
    return (sdf_values(spec, pts) <= 0.0).astype(np.uint8)


def _member_normals(m: Member, pts: np.ndarray) -> np.ndarray:
    p = pts - np.asarray(m.offset, dtype=pts.dtype)
    if m.kind == CLASS_SPHERE:
        n = p
    elif m.kind == CLASS_BOX:
        # gradient of the box SDF: valid on faces/edges, where samples live
        q = np.abs(p) - np.asarray(m.params[:3], dtype=pts.dtype)
        outer = np.maximum(q, 0.0)
        on_face = outer.sum(axis=-1, keepdims=True) <= 1e-12
        face_axis = np.argmax(q, axis=-1)
        face_n = np.zeros_like(p)
        face_n[np.arange(len(p)), face_axis] = 1.0
        n = np.where(on_face, face_n, outer) * np.sign(p)
    else:
        R, _ = m.params[:2]
        ring = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
        ring = np.maximum(ring, 1e-12)
        scale = (ring - R) / ring
        n = np.stack([p[..., 0] * scale, p[..., 1] * scale, p[..., 2]], axis=-1)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.maximum(norm, 1e-12)


def surface_normals(spec: ShapeSpec, pts: np.ndarray) -> np.ndarray:
    """Unit outward normals at on-surface points (nearest member's gradient)."""
    pts = np.asarray(pts, dtype=np.float64)
    if len(spec.members) == 1:
        return _member_normals(spec.members[0], pts)
    dists = np.stack([_member_sdf(m, pts) for m in spec.members], axis=0)
    owner = np.argmin(dists, axis=0)
    out = np.empty_like(pts)
    for mi, m in enumerate(spec.members):
        mask = owner == mi
        if mask.any():
            out[mask] = _member_normals(m, pts[mask])
    return out


def random_spec(class_id: int, rng: np.random.Generator) -> ShapeSpec:
    """Draw a spec of the given class with parameters that fit the cube."""
    if class_id == CLASS_SPHERE:
        return ShapeSpec(class_id, (Member(CLASS_SPHERE, (float(rng.uniform(0.3, 0.8)),)),))
    if class_id == CLASS_BOX:
        h = tuple(float(x) for x in rng.uniform(0.2, 0.5, size=3))
        return ShapeSpec(class_id, (Member(CLASS_BOX, h),))
    if class_id == CLASS_TORUS:
        R = float(rng.uniform(0.35, 0.6))
        r = float(rng.uniform(0.1, min(0.28, 0.88 - R)))
        return ShapeSpec(class_id, (Member(CLASS_TORUS, (R, r)),))
    if class_id == CLASS_UNION:
        n = int(rng.integers(2, 4))
        members = []
        for _ in range(n):
            kind = int(rng.integers(0, 3))
            if kind == CLASS_SPHERE:
                params = (float(rng.uniform(0.18, 0.38)),)
            elif kind == CLASS_BOX:
                params = tuple(float(x) for x in rng.uniform(0.12, 0.3, size=3))
            else:
                R = float(rng.uniform(0.2, 0.32))
                params = (R, float(rng.uniform(0.06, 0.12)))
            bound = Member(kind, params).bound()
            room = max(0.0, _FIT_LIMIT - bound - 1e-3)
            offset = tuple(float(x) for x in rng.uniform(-room, room, size=3))
            members.append(Member(kind, params, offset))
        return ShapeSpec(class_id, tuple(members))
    raise ValueError(f"unknown class_id {class_id}")
