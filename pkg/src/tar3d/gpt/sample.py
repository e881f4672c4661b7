"""Autoregressive sampling with a KV cache and classifier-free guidance.

The sampler mirrors the training forward in plain numpy (no graph); the
conditional and null-condition streams run in lockstep as a 2-row batch, and
every step mixes their logits as l_u + s * (l_c - l_u) in float64 before
top-k truncation, temperature scaling, and multinomial draw. The reserved
padding id (vocab - 1) is always masked out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seqcodec import angles_with_prefix
from .model import GPT, Condition

_GELU_C = 0.7978845608028654


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * g + b


@dataclass
class StepLogits:
    conditional: np.ndarray
    unconditional: np.ndarray
    mixed: np.ndarray


class GPTSampler:
    """Incremental decoder over a frozen GPT's parameters."""

    def __init__(self, model: GPT):
        self.model = model
        cfg = model.cfg
        ang = angles_with_prefix(model.rope_table, 1 + cfg.seq_len, 1)
        self._cos = np.cos(ang).astype(np.float32)
        self._sin = np.sin(ang).astype(np.float32)

    def _rotate(self, x: np.ndarray, pos: int, n: int) -> np.ndarray:
        cos = self._cos[pos:pos + n]
        sin = self._sin[pos:pos + n]
        a = x[..., 0::2]
        b = x[..., 1::2]
        out = np.empty_like(x)
        out[..., 0::2] = a * cos - b * sin
        out[..., 1::2] = a * sin + b * cos
        return out

    def _step(self, x: np.ndarray, caches: list, pos: int) -> np.ndarray:
        """Run n new positions through all blocks; x (B, n, D), absolute offset pos."""
        cfg = self.model.cfg
        B, n, D = x.shape
        H, dh = cfg.n_heads, cfg.head_dim
        for block, cache in zip(self.model.blocks, caches):
            a = block.attn
            xn = _layer_norm(x, block.ln1.g.data, block.ln1.b.data)
            q = (xn @ a.wq.w.data + a.wq.b.data).reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            k = (xn @ a.wk.w.data + a.wk.b.data).reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            v = (xn @ a.wv.w.data + a.wv.b.data).reshape(B, n, H, dh).transpose(0, 2, 1, 3)
            q = self._rotate(q, pos, n)
            k = self._rotate(k, pos, n)
            cache["k"][:, :, pos:pos + n] = k
            cache["v"][:, :, pos:pos + n] = v
            keys = cache["k"][:, :, :pos + n]
            vals = cache["v"][:, :, :pos + n]
            scores = np.matmul(q, keys.transpose(0, 1, 3, 2)) / np.sqrt(dh)
            if n > 1:
                mask = np.triu(np.ones((n, pos + n), dtype=bool), k=pos + 1)
                scores = np.where(mask, np.float32(-np.inf), scores)
            m = scores.max(axis=-1, keepdims=True)
            e = np.exp(scores - m)
            w = e / e.sum(axis=-1, keepdims=True)
            attn = np.matmul(w, vals).transpose(0, 2, 1, 3).reshape(B, n, D)
            x = x + attn @ a.wo.w.data + a.wo.b.data
            xn = _layer_norm(x, block.ln2.g.data, block.ln2.b.data)
            hidden = _gelu(xn @ block.mlp.fc1.w.data + block.mlp.fc1.b.data)
            x = x + hidden @ block.mlp.fc2.w.data + block.mlp.fc2.b.data
        return x

    def _logits(self, hidden_last: np.ndarray) -> np.ndarray:
        h = _layer_norm(hidden_last, self.model.ln_f.g.data, self.model.ln_f.b.data)
        return h @ self.model.lm_head.w.data + self.model.lm_head.b.data

    def sample(self, cond: Condition, cfg_scale: float = 1.0, temperature: float = 1.0,
               top_k: int = 0, seed: int = 0, record_logits: bool = False,
               ) -> tuple[np.ndarray, list[StepLogits]]:
        """Draw one length-3hw token sequence; returns (tokens, per-step logits)."""
        if cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        cfg = self.model.cfg
        rng = np.random.default_rng(seed)
        null = Condition.null(length=cond.prefix_len())
        prefix = np.stack([self.model.prefix_rows(cond),
                           self.model.prefix_rows(null)]).astype(np.float32)
        B, P, D = prefix.shape
        cap = P + cfg.seq_len
        caches = [{"k": np.zeros((B, cfg.n_heads, cap, cfg.head_dim), dtype=np.float32),
                   "v": np.zeros((B, cfg.n_heads, cap, cfg.head_dim), dtype=np.float32)}
                  for _ in range(cfg.n_layers)]
        hidden = self._step(prefix, caches, 0)
        tokens = np.empty(cfg.seq_len, dtype=np.int64)
        trace: list[StepLogits] = []
        reserved = cfg.vocab - 1
        for t in range(cfg.seq_len):
            logits = self._logits(hidden[:, -1]).astype(np.float64)
            l_c, l_u = logits[0], logits[1]
            mixed = l_u + cfg_scale * (l_c - l_u)
            if record_logits:
                trace.append(StepLogits(conditional=l_c.copy(), unconditional=l_u.copy(),
                                        mixed=mixed.copy()))
            mixed = mixed.copy()
            mixed[reserved] = -np.inf
            if top_k and top_k < mixed.size:
                kth = np.partition(mixed, -top_k)[-top_k]
                mixed[mixed < kth] = -np.inf
            if top_k == 1:
                tok = int(np.argmax(mixed))
            else:
                z = mixed / temperature
                z -= z.max()
                p = np.exp(z)
                p /= p.sum()
                tok = int(rng.choice(cfg.vocab, p=p))
            tokens[t] = tok
            emb = self.model.wte.data[np.asarray([tok, tok])][:, None, :]
            hidden = self._step(emb.astype(np.float32), caches, P + t)
        return tokens, trace


def sample_tokens(model: GPT, cond: Condition, cfg_scale: float, temperature: float,
                  top_k: int, seed: int) -> np.ndarray:
    tokens, _ = GPTSampler(model).sample(cond, cfg_scale=cfg_scale, temperature=temperature,
                                         top_k=top_k, seed=seed)
    return tokens
