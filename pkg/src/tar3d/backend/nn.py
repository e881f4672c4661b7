"""Parameter management and transformer building blocks on top of autograd."""

from __future__ import annotations

import numpy as np

from .autograd import (
    Parameter,
    Tensor,
    affine,
    attention,
    apply_rotary,
    gelu,
    layer_norm,
    reshape,
    transpose,
)


class ParameterStore:
    """Flat registry of named Parameters; names are checkpoint keys."""

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self._params: dict[str, Parameter] = {}

    def param(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(np.asarray(data, dtype=self.dtype), name)
        self._params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = [k for k in self._params if k not in state]
        if missing:
            raise KeyError(f"checkpoint missing parameters: {missing[:4]}{'...' if len(missing) > 4 else ''}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None


def normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, std: float = 0.02, bias: bool = True):
        self.w = store.param(f"{name}.w", normal(rng, (d_in, d_out), std))
        self.b = store.param(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int):
        self.g = store.param(f"{name}.g", np.ones(dim))
        self.b = store.param(f"{name}.b", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, T, H*dh) -> (B, H, T, dh)."""
    B, T, D = x.shape
    return transpose(reshape(x, (B, T, n_heads, D // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, T, dh) -> (B, T, H*dh)."""
    B, H, T, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, T, H * dh))


class MultiHeadAttention:
    """Self- or cross-attention over (B, T, D) streams, optional rotary angles."""

    def __init__(self, store: ParameterStore, name: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, d_kv: int | None = None):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        d_kv = d_model if d_kv is None else d_kv
        self.n_heads = n_heads
        self.wq = Linear(store, f"{name}.q", d_model, d_model, rng)
        self.wk = Linear(store, f"{name}.k", d_kv, d_model, rng)
        self.wv = Linear(store, f"{name}.v", d_kv, d_model, rng)
        self.wo = Linear(store, f"{name}.o", d_model, d_model, rng)

    def __call__(self, x_q: Tensor, x_kv: Tensor | None = None, causal: bool = False,
                 rope: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
        x_kv = x_q if x_kv is None else x_kv
        q = split_heads(self.wq(x_q), self.n_heads)
        k = split_heads(self.wk(x_kv), self.n_heads)
        v = split_heads(self.wv(x_kv), self.n_heads)
        if rope is not None:
            cos, sin = rope
            q = apply_rotary(q, cos, sin)
            k = apply_rotary(k, cos, sin)
        return self.wo(merge_heads(attention(q, k, v, causal=causal)))


class Mlp:
    def __init__(self, store: ParameterStore, name: str, d_model: int, d_hidden: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(store, f"{name}.fc1", d_model, d_hidden, rng)
        self.fc2 = Linear(store, f"{name}.fc2", d_hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock:
    """Pre-LN residual block: x + attn(ln(x)); x + mlp(ln(x))."""

    def __init__(self, store: ParameterStore, name: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, n_heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.mlp = Mlp(store, f"{name}.mlp", d_model, mlp_ratio * d_model, rng)

    def __call__(self, x: Tensor, causal: bool = False,
                 rope: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), causal=causal, rope=rope)
        return x + self.mlp(self.ln2(x))
