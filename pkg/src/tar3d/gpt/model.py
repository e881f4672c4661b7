"""Decoder-only transformer over triplane token sequences with prompt prefilling.

Conditions become a learned prefix (one embedding row per class, a learned
null row for unconditional training/guidance, or externally supplied embedding
matrices). Shape-token positions get triplane rotary angles; prefix positions
get zero angles. Logits at step t predict token t given the prefix and tokens
before t.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..backend import (
    LayerNorm,
    Linear,
    ParameterStore,
    Tensor,
    TransformerBlock,
    concat,
    cross_entropy,
    embedding,
    no_grad,
    reshape,
    slice_axis,
)
from ..backend.checkpoint import load_checkpoint, save_checkpoint
from ..backend.nn import normal
from ..seqcodec import angles_with_prefix, rope1d_table, tripe_table

POS_TRIPE = "tripe"
POS_ROPE1D = "rope1d"


@dataclass
class GPTConfig:
    n_layers: int = 6
    n_heads: int = 8
    d_model: int = 256
    h: int = 8
    w: int = 8
    codebook_size: int = 512     # K; vocab is K+1 with reserved id K unused
    num_classes: int = 3
    cond_dropout: float = 0.1
    pos_mode: str = POS_TRIPE
    rope_base: float = 10000.0
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.head_dim % 4:
            raise ValueError(f"head_dim {self.head_dim} must be divisible by 4")
        if self.pos_mode not in (POS_TRIPE, POS_ROPE1D):
            raise ValueError(f"unknown pos_mode {self.pos_mode!r}")

    @property
    def seq_len(self) -> int:
        return 3 * self.h * self.w

    @property
    def vocab(self) -> int:
        return self.codebook_size + 1

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def paper_scale_gpt(codebook_size: int = 16384, h: int = 32, w: int = 32) -> GPTConfig:
    return GPTConfig(n_layers=24, n_heads=16, d_model=1024, h=h, w=w,
                     codebook_size=codebook_size)


@dataclass
class Condition:
    """One of: class id, external embedding rows (P, d_model), or null.

    Null conditions carry a length so they can stand in for multi-row external
    prefixes (condition dropout, the unconditional guidance stream).
    """
    kind: str = "null"                     # "class" | "external" | "null"
    class_id: int | None = None
    embedding: np.ndarray | None = None
    length: int = 1

    @classmethod
    def for_class(cls, class_id: int) -> "Condition":
        return cls(kind="class", class_id=int(class_id))

    @classmethod
    def external(cls, rows: np.ndarray) -> "Condition":
        rows = np.atleast_2d(np.asarray(rows))
        return cls(kind="external", embedding=rows)

    @classmethod
    def null(cls, length: int = 1) -> "Condition":
        return cls(kind="null", length=length)

    def prefix_len(self) -> int:
        if self.kind == "external":
            return self.embedding.shape[0]
        return self.length if self.kind == "null" else 1


class GPT:
    def __init__(self, cfg: GPTConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.store = ParameterStore(dtype)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
        st = self.store
        self.wte = st.param("wte", normal(rng, (cfg.vocab, cfg.d_model)))
        self.class_emb = st.param("cond.classes", normal(rng, (cfg.num_classes, cfg.d_model)))
        self.null_emb = st.param("cond.null", normal(rng, (1, cfg.d_model)))
        self.blocks = [TransformerBlock(st, f"block{i}", cfg.d_model, cfg.n_heads, rng,
                                        mlp_ratio=cfg.mlp_ratio)
                       for i in range(cfg.n_layers)]
        self.ln_f = LayerNorm(st, "ln_f", cfg.d_model)
        self.lm_head = Linear(st, "lm_head", cfg.d_model, cfg.vocab, rng)
        table = tripe_table if cfg.pos_mode == POS_TRIPE else rope1d_table
        self.rope_table = table(cfg.h, cfg.w, cfg.head_dim, cfg.rope_base)

    # -- conditions -----------------------------------------------------------

    def prefix_rows(self, cond: Condition) -> np.ndarray:
        """(P, d_model) prefix embedding for one condition."""
        if cond.kind == "class":
            if cond.class_id is None or not 0 <= cond.class_id < self.cfg.num_classes:
                raise ValueError(f"unknown class_id {cond.class_id} "
                                 f"(model trained with {self.cfg.num_classes} classes)")
            return self.class_emb.data[cond.class_id:cond.class_id + 1]
        if cond.kind == "external":
            rows = np.asarray(cond.embedding, dtype=self.store.dtype)
            if rows.ndim != 2 or rows.shape[1] != self.cfg.d_model:
                raise ValueError(f"external embedding must be (P, {self.cfg.d_model}), got {rows.shape}")
            return rows
        return np.repeat(self.null_emb.data, cond.length, axis=0)

    def _prefix_tensor(self, conds: list[Condition]) -> Tensor:
        lens = {c.prefix_len() for c in conds}
        if len(lens) != 1:
            raise ValueError(f"mixed prefix lengths in one batch: {sorted(lens)}")
        if all(c.kind == "class" for c in conds):
            idx = np.asarray([c.class_id for c in conds])
            if idx.min() < 0 or idx.max() >= self.cfg.num_classes:
                raise ValueError(f"unknown class_id in {idx}")
            return reshape(embedding(self.class_emb, idx), (len(conds), 1, self.cfg.d_model))
        if all(c.kind == "null" and c.length == 1 for c in conds):
            idx = np.zeros(len(conds), dtype=np.int64)
            return reshape(embedding(self.null_emb, idx), (len(conds), 1, self.cfg.d_model))
        # mixed batch (condition dropout) or external rows: one graph node per sample
        p_len = conds[0].prefix_len()
        parts = []
        for c in conds:
            if c.kind == "class":
                part = reshape(embedding(self.class_emb, np.asarray([c.class_id])),
                               (1, 1, self.cfg.d_model))
            elif c.kind == "null":
                part = reshape(embedding(self.null_emb, np.zeros(c.length, dtype=np.int64)),
                               (1, p_len, self.cfg.d_model))
            else:
                part = Tensor(self.prefix_rows(c)[None])
            parts.append(part)
        return concat(parts, axis=0)

    # -- forward ----------------------------------------------------------------

    def rope_for(self, length: int, prefix: int) -> tuple[np.ndarray, np.ndarray]:
        ang = angles_with_prefix(self.rope_table, length, prefix)
        return (np.cos(ang).astype(self.store.dtype), np.sin(ang).astype(self.store.dtype))

    def forward(self, tokens: np.ndarray, conds: list[Condition] | Condition) -> Tensor:
        """tokens (B, T) ids -> logits (B, T, vocab); logits[t] predicts tokens[t]."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if isinstance(conds, Condition):
            conds = [conds] * tokens.shape[0]
        B, T = tokens.shape
        if T > self.cfg.seq_len:
            raise ValueError(f"sequence length {T} exceeds {self.cfg.seq_len}")
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab:
            raise ValueError(f"token id outside [0, {self.cfg.vocab})")
        prefix = self._prefix_tensor(conds)
        P = prefix.shape[1]
        x = concat([prefix, embedding(self.wte, tokens)], axis=1)
        rope = self.rope_for(P + T, P)
        for block in self.blocks:
            x = block(x, causal=True, rope=rope)
        h = slice_axis(self.ln_f(x), 1, P - 1, P + T - 1)
        return self.lm_head(h)

    def gpt_loss(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        """Mean next-token NLL over the shape tokens only (prefix never scored)."""
        targets = np.asarray(targets)
        if targets.min() < 0 or targets.max() >= self.cfg.codebook_size:
            raise ValueError(f"target id outside [0, {self.cfg.codebook_size}) "
                             "(reserved padding id cannot be a target)")
        return cross_entropy(logits, targets)

    # -- persistence ---------------------------------------------------------------

    _INT_FIELDS = ("n_layers", "n_heads", "d_model", "h", "w", "codebook_size",
                   "num_classes", "mlp_ratio")

    def save(self, path, extra: dict[str, np.ndarray] | None = None):
        arrays = dict(self.store.state())
        for name in self._INT_FIELDS:
            arrays[f"meta.{name}"] = np.asarray([getattr(self.cfg, name)], dtype=np.int64)
        arrays["meta.cond_dropout"] = np.asarray([self.cfg.cond_dropout], dtype=np.float64)
        arrays["meta.rope_base"] = np.asarray([self.cfg.rope_base], dtype=np.float64)
        arrays["meta.pos_tripe"] = np.asarray([1 if self.cfg.pos_mode == POS_TRIPE else 0],
                                              dtype=np.int64)
        if extra:
            arrays.update(extra)
        save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "GPT":
        arrays = load_checkpoint(path)
        kwargs = {name: int(arrays[f"meta.{name}"][0]) for name in cls._INT_FIELDS}
        kwargs["cond_dropout"] = float(arrays["meta.cond_dropout"][0])
        kwargs["rope_base"] = float(arrays["meta.rope_base"][0])
        kwargs["pos_mode"] = POS_TRIPE if int(arrays["meta.pos_tripe"][0]) else POS_ROPE1D
        model = cls(GPTConfig(**kwargs), dtype=dtype)
        model.store.load_state(arrays)
        return model


# -- condition embedding file -----------------------------------------------------


def write_embedding_file(path, rows: np.ndarray):
    """Header (count u32, dim u32) then count rows of dim little-endian f32."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float32))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        fh.write(rows.astype("<f4").tobytes())


def read_embedding_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise IOError(f"{path}: truncated embedding file")
    count, dim = struct.unpack_from("<II", raw, 0)
    body = np.frombuffer(raw, dtype="<f4", offset=8)
    if body.size != count * dim:
        raise IOError(f"{path}: expected {count}x{dim} floats, found {body.size}")
    return body.reshape(count, dim).copy()
