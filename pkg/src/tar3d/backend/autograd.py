"""Reverse-mode autodiff over dense numpy arrays.

A Tensor wraps one ndarray (float32 for training, float64 for numerical
verification) plus an optional gradient of the same shape. Ops build a DAG of
backward closures; Tensor.backward() runs them in reverse topological order
and accumulates into every requires_grad leaf. Heavy composites (softmax,
attention, layer norm, grid sampling) are single nodes with hand-written
backward passes; everything else composes.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class NumericsError(FloatingPointError):
    """NaN/Inf detected where finite values are required."""


_grad_enabled = True


class no_grad:
    """Context manager disabling graph construction (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_grad_shared")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()
        self._grad_shared = False

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autograd machinery ---------------------------------------------------

    def _accum(self, g: np.ndarray):
        # first consumer adopts the buffer (copy-on-write); later consumers
        # allocate once instead of mutating a possibly shared array
        if self.grad is None:
            if g.dtype != self.data.dtype or g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape).astype(self.data.dtype)
                self.grad = g
                self._grad_shared = False
            else:
                self.grad = g
                self._grad_shared = True
        elif self._grad_shared:
            self.grad = self.grad + g
            self._grad_shared = False
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        """Backprop from this tensor into all requires_grad ancestors."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without grad needs a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        self._grad_shared = False
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_scalar(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """Named trainable leaf; unique name within one model/checkpoint."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    out = _node(data, (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))
        out._backward = bwd
    return out


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    out = _node(data, (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))
        out._backward = bwd
    return out


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out = _node(a.data ** p, (a,))
    if out.requires_grad:
        def bwd(g):
            a._accum(g * p * a.data ** (p - 1.0))
        out._backward = bwd
    return out


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    out = _node(data, (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * data)
    return out


def tlog(a: Tensor) -> Tensor:
    out = _node(np.log(a.data), (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g / a.data)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = _node(data.astype(a.data.dtype), (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * out.data * (1.0 - out.data))
    return out


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    out = _node(data, (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * (1.0 - data * data))
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g * (a.data > 0))
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    inner = x * (_GELU_C + (_GELU_C * 0.044715) * x2)
    t = np.tanh(inner)
    out = _node(0.5 * x * (1.0 + t), (a,))
    if out.requires_grad:
        def bwd(g):
            dinner = _GELU_C + (3 * 0.044715 * _GELU_C) * x2
            ga = 1.0 - t * t
            ga *= dinner
            ga *= 0.5 * x
            ga += 0.5 * (1.0 + t)
            ga *= g
            a._accum(ga)
        out._backward = bwd
    return out


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    out = _node(np.asarray(data), (a,))
    if out.requires_grad:
        def bwd(g):
            if axis is None:
                a._accum(np.broadcast_to(g, a.data.shape))
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                a._accum(np.broadcast_to(g, a.data.shape))
        out._backward = bwd
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = _node(a.data.reshape(shape), (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g.reshape(a.data.shape))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _node(np.ascontiguousarray(a.data.transpose(axes)), (a,))
    if out.requires_grad:
        out._backward = lambda g: a._accum(g.transpose(inv))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _node(data, tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bwd(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(int(lo), int(hi))
                    t._accum(g[tuple(idx)])
        out._backward = bwd
    return out


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = _node(a.data[idx], (a,))
    if out.requires_grad:
        def bwd(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accum(full)
        out._backward = bwd
    return out


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} @ {b.data.shape}")
    out = _node(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accum(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accum(_unbroadcast(gb, b.data.shape))
        out._backward = bwd
    return out


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) as one node; x (..., d_in), w (d_in, d_out), b (d_out,)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"affine: {x.data.shape} @ {w.data.shape}")
    data = np.matmul(x.data, w.data)
    if b is not None:
        data += b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _node(data, parents)
    if out.requires_grad:
        def bwd(g):
            d_in, d_out = w.data.shape
            if b is not None and b.requires_grad:
                b._accum(g.reshape(-1, d_out).sum(axis=0))
            if w.requires_grad:
                w._accum(np.matmul(x.data.reshape(-1, d_in).T, g.reshape(-1, d_out)))
            if x.requires_grad:
                x._accum(np.matmul(g, w.data.T))
        out._backward = bwd
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out = _node(p, (a,))
    if out.requires_grad:
        def bwd(g):
            a._accum(p * (g - (g * p).sum(axis=-1, keepdims=True)))
        out._backward = bwd
    return out


def log_softmax(a: Tensor) -> Tensor:
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    out = _node(data, (a,))
    if out.requires_grad:
        def bwd(g):
            a._accum(g - np.exp(data) * g.sum(axis=-1, keepdims=True))
        out._backward = bwd
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _node(xhat * gain.data + bias.data, (a, gain, bias))
    if out.requires_grad:
        def bwd(g):
            d = x.shape[-1]
            if gain.requires_grad:
                gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                bias._accum(g.reshape(-1, d).sum(axis=0))
            if a.requires_grad:
                gy = g * gain.data
                a._accum(inv * (gy - gy.mean(axis=-1, keepdims=True)
                                - xhat * (gy * xhat).mean(axis=-1, keepdims=True)))
        out._backward = bwd
    return out


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """Scaled dot-product attention.

    q: (..., T, d), k/v: (..., S, d); leading dims broadcast. causal requires
    T == S and masks keys at positions greater than the query position.
    """
    dh = q.data.shape[-1]
    if k.data.shape[-1] != dh or v.data.shape[:-1] != k.data.shape[:-1]:
        raise ShapeError(f"attention: incompatible shapes q{q.data.shape} k{k.data.shape} v{v.data.shape}")
    T, S = q.data.shape[-2], k.data.shape[-2]
    if causal and T != S:
        raise ShapeError(f"attention: causal mask needs square scores, got T={T} S={S}")
    scale = np.asarray(1.0 / np.sqrt(dh), dtype=q.data.dtype)
    # fold the scale into q so the big score array gets no extra pass
    w = np.matmul(q.data * scale, np.swapaxes(k.data, -1, -2))
    if causal:
        mask = np.triu(np.ones((T, S), dtype=bool), k=1)
        np.copyto(w, -np.inf, where=mask)
    w -= w.max(axis=-1, keepdims=True)
    np.exp(w, out=w)
    w /= w.sum(axis=-1, keepdims=True)
    out = _node(np.matmul(w, v.data), (q, k, v))
    if out.requires_grad:
        def bwd(g):
            if v.requires_grad:
                v._accum(_unbroadcast(np.matmul(np.swapaxes(w, -1, -2), g), v.data.shape))
            gs = np.matmul(g, np.swapaxes(v.data, -1, -2))
            dot = np.einsum("...ts,...ts->...t", gs, w)[..., None]
            gs -= dot
            gs *= w
            if q.requires_grad:
                gq = np.matmul(gs, k.data)
                gq *= scale
                q._accum(_unbroadcast(gq, q.data.shape))
            if k.requires_grad:
                gk = np.matmul(np.swapaxes(gs, -1, -2), q.data)
                gk *= scale
                k._accum(_unbroadcast(gk, k.data.shape))
        out._backward = bwd
    return out


def apply_rotary(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive channel pairs of x (..., T, D) by per-(position, pair) angles.

    cos/sin have shape (T, D//2) and broadcast over leading dims.
    """
    a = x.data[..., 0::2]
    b = x.data[..., 1::2]
    data = np.empty_like(x.data)
    data[..., 0::2] = a * cos - b * sin
    data[..., 1::2] = a * sin + b * cos
    out = _node(data, (x,))
    if out.requires_grad:
        def bwd(g):
            ge = g[..., 0::2]
            go = g[..., 1::2]
            gx = np.empty_like(x.data)
            gx[..., 0::2] = ge * cos + go * sin
            gx[..., 1::2] = -ge * sin + go * cos
            x._accum(gx)
        out._backward = bwd
    return out


# -- gather / scatter ---------------------------------------------------------


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...]]. Backward scatter-adds."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.data.shape[0]):
        raise ShapeError(f"embedding: index out of range for table of {weight.data.shape[0]} rows")
    out = _node(weight.data[ids], (weight,))
    if out.requires_grad:
        def bwd(g):
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids.ravel(), g.reshape(-1, weight.data.shape[1]))
            weight._accum(gw)
        out._backward = bwd
    return out


def grid_sample(plane: Tensor, uv: np.ndarray) -> Tensor:
    """Bilinear sample of plane (H, W, C) at uv (M, 2) in [-1, 1] (align-corners).

    uv[:, 0] indexes the height axis, uv[:, 1] the width axis.
    """
    H, W, _ = plane.data.shape
    rr = np.clip((uv[:, 0] + 1.0) * 0.5 * (H - 1), 0.0, H - 1)
    cc = np.clip((uv[:, 1] + 1.0) * 0.5 * (W - 1), 0.0, W - 1)
    r0 = np.minimum(rr.astype(np.int64), H - 2) if H > 1 else np.zeros_like(rr, dtype=np.int64)
    c0 = np.minimum(cc.astype(np.int64), W - 2) if W > 1 else np.zeros_like(cc, dtype=np.int64)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    fr = (rr - r0).astype(plane.data.dtype)[:, None]
    fc = (cc - c0).astype(plane.data.dtype)[:, None]
    w00 = (1 - fr) * (1 - fc)
    w01 = (1 - fr) * fc
    w10 = fr * (1 - fc)
    w11 = fr * fc
    p = plane.data
    data = w00 * p[r0, c0] + w01 * p[r0, c1] + w10 * p[r1, c0] + w11 * p[r1, c1]
    out = _node(data, (plane,))
    if out.requires_grad:
        def bwd(g):
            gp = np.zeros_like(plane.data)
            np.add.at(gp, (r0, c0), g * w00)
            np.add.at(gp, (r0, c1), g * w01)
            np.add.at(gp, (r1, c0), g * w10)
            np.add.at(gp, (r1, c1), g * w11)
            plane._accum(gp)
        out._backward = bwd
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsample of the (-3, -2) axes of (..., H, W, C)."""
    data = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)
    out = _node(data, (x,))
    if out.requires_grad:
        def bwd(g):
            s = x.data.shape
            lead = s[:-3]
            g = g.reshape(lead + (s[-3], 2, s[-2], 2, s[-1]))
            x._accum(g.sum(axis=(-4, -2)))
        out._backward = bwd
    return out


# -- losses ---------------------------------------------------------------------


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    logits (..., V) are flattened to (N, V); targets must hold N ints in [0, V).
    """
    V = logits.data.shape[-1]
    flat = logits.data.reshape(-1, V)
    t = np.asarray(targets).reshape(-1)
    if t.size != flat.shape[0]:
        raise ShapeError(f"cross_entropy: {flat.shape[0]} rows vs {t.size} targets")
    if t.min() < 0 or t.max() >= V:
        raise ShapeError(f"cross_entropy: target outside [0, {V})")
    m = flat.max(axis=-1, keepdims=True)
    e = np.exp(flat - m)
    z = e.sum(axis=-1, keepdims=True)
    p = e / z
    n = flat.shape[0]
    nll = -(flat[np.arange(n), t] - m[:, 0] - np.log(z[:, 0]))
    out = _node(np.asarray(nll.mean(), dtype=logits.data.dtype), (logits,))
    if out.requires_grad:
        def bwd(g):
            gl = p.copy()
            gl[np.arange(n), t] -= 1.0
            logits._accum((gl * (float(g) / n)).reshape(logits.data.shape))
        out._backward = bwd
    return out


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against {0,1} labels."""
    l = logits.data
    y = np.asarray(labels, dtype=l.dtype)
    if y.shape != l.shape:
        raise ShapeError(f"bce: logits {l.shape} vs labels {y.shape}")
    # max(l,0) - l*y + log(1+exp(-|l|)): stable for large |l|
    per = np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))
    out = _node(np.asarray(per.mean(), dtype=l.dtype), (logits,))
    if out.requires_grad:
        def bwd(g):
            s = np.where(l >= 0, 1.0 / (1.0 + np.exp(-np.abs(l))),
                         np.exp(-np.abs(l)) / (1.0 + np.exp(-np.abs(l))))
            logits._accum((s - y) * (float(g) / l.size))
        out._backward = bwd
    return out


def check_finite(x: Tensor | np.ndarray, what: str = "value"):
    data = x.data if isinstance(x, Tensor) else x
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite {what} detected")
