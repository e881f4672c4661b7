"""Ordering between triplane index grids and 1D token sequences, plus the
triplane rotary position encoding (TriPE).

Sequence order: token t = 3*(i*w + j) + k, i.e. raster scan over plane cells
with the three planes (0=XY, 1=YZ, 2=XZ) interleaved at each cell so the same
cell of the three planes occupies adjacent steps.

TriPE assigns each position an angle per rotary channel pair: an axial 2D
encoding over the cell (i, j), repeated three times so all planes of a cell
share it, plus a 1D encoding over the plane index k, repeated across cells.
The two parts add; since rotary encodings compose by angle addition this keeps
attention scores a function of (delta i, delta j, delta k) only.
"""

from __future__ import annotations

from dataclasses import dataclass

import struct
from pathlib import Path

import numpy as np

PLANE_XY, PLANE_YZ, PLANE_XZ = 0, 1, 2


@dataclass
class TokenSequence:
    tokens: np.ndarray  # (3*h*w,) int64
    h: int
    w: int


def build_sequence(indices: np.ndarray, k_bound: int | None = None) -> TokenSequence:
    """Interleave a (3, h, w) index grid into a length 3*h*w sequence."""
    indices = np.asarray(indices)
    if indices.ndim != 3 or indices.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) grid, got {indices.shape}")
    if indices.min() < 0 or (k_bound is not None and indices.max() >= k_bound):
        raise ValueError(f"index out of range [0, {k_bound})")
    _, h, w = indices.shape
    tokens = np.ascontiguousarray(indices.transpose(1, 2, 0)).reshape(-1)
    return TokenSequence(tokens=tokens.astype(np.int64), h=h, w=w)


def unbuild_sequence(seq: TokenSequence) -> np.ndarray:
    """Exact inverse of build_sequence."""
    tokens = np.asarray(seq.tokens)
    if tokens.ndim != 1 or tokens.size != 3 * seq.h * seq.w:
        raise ValueError(f"sequence length {tokens.size} != 3*{seq.h}*{seq.w}")
    return np.ascontiguousarray(tokens.reshape(seq.h, seq.w, 3).transpose(2, 0, 1))


def position_of(t: int, w: int) -> tuple[int, int, int]:
    """Sequence step -> (i, j, k)."""
    return (t // 3) // w, (t // 3) % w, t % 3


# -- rotary tables -----------------------------------------------------------


def tripe_angles(i, j, k, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Per-pair rotation angles for positions (i, j, k); shapes broadcast.

    Returns (..., head_dim // 2) float64. First half of the pairs rotates with
    i, second half with j; the plane index k adds a 1D encoding on every pair.
    """
    if head_dim % 4:
        raise ValueError(f"head_dim {head_dim} must be divisible by 4")
    i = np.asarray(i, dtype=np.float64)[..., None]
    j = np.asarray(j, dtype=np.float64)[..., None]
    k = np.asarray(k, dtype=np.float64)[..., None]
    q_axis = head_dim // 4
    freqs_2d = base ** (-2.0 * np.arange(q_axis) / (head_dim / 2))
    freqs_1d = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
    theta_2d = np.concatenate([i * freqs_2d, j * freqs_2d], axis=-1)
    theta_1d = k * freqs_1d
    return theta_2d + theta_1d


def rope1d_angles(t, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Plain 1D rotary angles over sequence step t; (..., head_dim // 2)."""
    if head_dim % 2:
        raise ValueError(f"head_dim {head_dim} must be even")
    t = np.asarray(t, dtype=np.float64)[..., None]
    freqs = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
    return t * freqs


@dataclass
class TriPETable:
    angles: np.ndarray  # (3*h*w, head_dim // 2) float64
    h: int
    w: int
    head_dim: int
    base: float


def tripe_table(h: int, w: int, head_dim: int, base: float = 10000.0) -> TriPETable:
    t = np.arange(3 * h * w)
    i, j, k = (t // 3) // w, (t // 3) % w, t % 3
    return TriPETable(angles=tripe_angles(i, j, k, head_dim, base), h=h, w=w,
                      head_dim=head_dim, base=base)


def rope1d_table(h: int, w: int, head_dim: int, base: float = 10000.0) -> TriPETable:
    t = np.arange(3 * h * w)
    return TriPETable(angles=rope1d_angles(t, head_dim, base), h=h, w=w,
                      head_dim=head_dim, base=base)


def angles_with_prefix(table: TriPETable, length: int, prefix: int = 0) -> np.ndarray:
    """Angle rows for an input of `length` positions, zero on the first `prefix`."""
    body = length - prefix
    if body > table.angles.shape[0]:
        raise ValueError(f"{body} shape tokens exceed table of {table.angles.shape[0]}")
    out = np.zeros((length, table.angles.shape[1]))
    if body > 0:
        out[prefix:] = table.angles[:body]
    return out


def apply_rope(vectors: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate consecutive channel pairs of (..., T, D) by angles (T, D//2)."""
    cos = np.cos(angles)
    sin = np.sin(angles)
    a = vectors[..., 0::2]
    b = vectors[..., 1::2]
    out = np.empty_like(vectors)
    out[..., 0::2] = a * cos - b * sin
    out[..., 1::2] = a * sin + b * cos
    return out


# -- token sequence file -------------------------------------------------------

SEQ_MAGIC = b"T3DSEQ\0\0"
SEQ_VERSION = 1


def write_tokens(path, sequences: np.ndarray, h: int, w: int, k_codes: int):
    """Write (N, 3*h*w) token ids as little-endian u32 with an (h, w, K, count) header."""
    sequences = np.asarray(sequences)
    if sequences.ndim == 1:
        sequences = sequences[None, :]
    if sequences.shape[1] != 3 * h * w:
        raise ValueError(f"sequence length {sequences.shape[1]} != 3*{h}*{w}")
    if sequences.min() < 0 or sequences.max() > k_codes:
        raise ValueError(f"token id outside [0, {k_codes}]")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(SEQ_MAGIC)
        fh.write(struct.pack("<IIIII", SEQ_VERSION, h, w, k_codes, sequences.shape[0]))
        fh.write(sequences.astype("<u4").tobytes())


def read_tokens(path) -> tuple[np.ndarray, int, int, int]:
    """Read a token file; returns (sequences (N, 3*h*w) int64, h, w, K)."""
    raw = Path(path).read_bytes()
    if raw[:8] != SEQ_MAGIC:
        raise IOError(f"{path}: not a token sequence file")
    version, h, w, k_codes, count = struct.unpack_from("<IIIII", raw, 8)
    if version != SEQ_VERSION:
        raise IOError(f"{path}: unsupported version {version}")
    body = np.frombuffer(raw, dtype="<u4", offset=28)
    if body.size != count * 3 * h * w:
        raise IOError(f"{path}: truncated token data")
    return body.reshape(count, 3 * h * w).astype(np.int64), h, w, k_codes


CLS_MAGIC = b"T3CL"


def write_class_ids(path, ids: np.ndarray):
    ids = np.asarray(ids)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CLS_MAGIC)
        fh.write(struct.pack("<I", ids.size))
        fh.write(ids.astype("<u4").tobytes())


def read_class_ids(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CLS_MAGIC:
        raise IOError(f"{path}: not a class-id file")
    (count,) = struct.unpack_from("<I", raw, 4)
    body = np.frombuffer(raw, dtype="<u4", offset=8)
    if body.size != count:
        raise IOError(f"{path}: truncated")
    return body.astype(np.int64)
