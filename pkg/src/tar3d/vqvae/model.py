"""Triplane VQ-VAE: point-cloud encoder, codebook quantizer, occupancy decoder.

The encoder injects Fourier-encoded surface points into 3*h*w learnable query
tokens through one cross-attention layer, refines them with self-attention,
and projects to the codebook channel width. The decoder alternates per-plane
and cross-plane self-attention (plane information interaction), upsamples each
plane with learned 2x stages, and answers occupancy queries by summing
bilinearly sampled features from the three planes through a small MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .. import kernels
from ..backend import (
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ParameterStore,
    Tensor,
    TransformerBlock,
    concat,
    embedding,
    gelu,
    grid_sample,
    no_grad,
    reshape,
    slice_axis,
    transpose,
)
from ..backend.checkpoint import load_checkpoint, save_checkpoint
from ..backend.nn import normal
from ..shapes.sampling import PointCloudSample


@dataclass
class VQVAEConfig:
    n_points: int = 4096        # surface points per shape fed to the encoder
    h: int = 8                  # triplane height (= width)
    w: int = 8
    d_embed: int = 256          # query-token width
    d_latent: int = 8           # encoder latent channels (pre-projection)
    d_code: int = 8             # codebook channel width
    codebook_size: int = 512
    self_layers: int = 4        # encoder self-attention depth
    interact_layers: int = 2    # decoder plane-interaction depth
    heads: int = 4
    fourier_bands: int = 4
    d_dec: int = 128            # decoder plane channels
    dec_heads: int = 4
    mlp_hidden: int = 128       # occupancy head width
    upsample: int = 4           # plane upsampling factor (power of 2)
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.h != self.w:
            raise ValueError(f"square planes required, got {self.h}x{self.w}")
        if self.upsample & (self.upsample - 1):
            raise ValueError(f"upsample factor {self.upsample} is not a power of 2")

    @property
    def n_tokens(self) -> int:
        return 3 * self.h * self.w

    @property
    def fourier_dim(self) -> int:
        return 6 + 6 * 2 * self.fourier_bands


def paper_scale_config() -> VQVAEConfig:
    return VQVAEConfig(n_points=81920, h=32, w=32, d_embed=768, d_latent=16, d_code=8,
                       codebook_size=16384, self_layers=8, interact_layers=6, heads=12,
                       fourier_bands=8, d_dec=256, dec_heads=8, mlp_hidden=256,
                       upsample=8, mlp_ratio=4)


def fourier_encode(points_with_normals: np.ndarray, bands: int) -> np.ndarray:
    """(N, 6) -> (N, 6 + 6*2*bands): raw channels then sin/cos at octave scales."""
    if bands < 1:
        raise ValueError("fourier_bands must be >= 1")
    x = np.asarray(points_with_normals, dtype=np.float32)
    parts = [x]
    for b in range(bands):
        arg = (2.0**b) * np.pi * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


class UpsampleStage:
    """Learned 2x upsample: linear to 4 sub-texel channel groups, then unshuffle.

    A pointwise mix after nearest-neighbor cannot add sub-block detail, so each
    2x2 output position gets its own linear map of the source texel.
    """

    def __init__(self, store, name, dim, rng):
        self.proj = Linear(store, name, dim, 4 * dim, rng)
        self.dim = dim

    def __call__(self, planes: Tensor) -> Tensor:
        B, P, H, W, _ = planes.shape
        y = self.proj(planes)
        y = reshape(y, (B, P, H, W, 2, 2, self.dim))
        y = transpose(y, (0, 1, 2, 4, 3, 5, 6))
        return reshape(y, (B, P, 2 * H, 2 * W, self.dim))


class TriplaneVQVAE:
    def __init__(self, cfg: VQVAEConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.store = ParameterStore(dtype)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        st = self.store

        # encoder
        self.query_tokens = st.param("enc.queries", normal(rng, (cfg.n_tokens, cfg.d_embed)))
        self.enc_ln_q = LayerNorm(st, "enc.ln_q", cfg.d_embed)
        self.cross = MultiHeadAttention(st, "enc.cross", cfg.d_embed, cfg.heads, rng,
                                        d_kv=cfg.fourier_dim)
        self.enc_blocks = [TransformerBlock(st, f"enc.block{i}", cfg.d_embed, cfg.heads,
                                            rng, mlp_ratio=cfg.mlp_ratio)
                           for i in range(cfg.self_layers)]
        self.enc_ln_out = LayerNorm(st, "enc.ln_out", cfg.d_embed)
        self.to_latent = Linear(st, "enc.to_latent", cfg.d_embed, cfg.d_latent, rng)
        self.to_code = Linear(st, "enc.to_code", cfg.d_latent, cfg.d_code, rng)

        # quantizer
        k = cfg.codebook_size
        self.codebook = st.param("quant.codebook", rng.uniform(-1.0 / k, 1.0 / k,
                                                               size=(k, cfg.d_code)))

        # decoder
        self.dec_in = Linear(st, "dec.in", cfg.d_code, cfg.d_dec, rng)
        self.dec_pos = st.param("dec.pos", normal(rng, (cfg.n_tokens, cfg.d_dec)))
        self.plane_blocks = []
        self.fuse_blocks = []
        for i in range(cfg.interact_layers):
            self.plane_blocks.append(TransformerBlock(st, f"dec.plane{i}", cfg.d_dec,
                                                      cfg.dec_heads, rng, mlp_ratio=cfg.mlp_ratio))
            self.fuse_blocks.append(TransformerBlock(st, f"dec.fuse{i}", cfg.d_dec,
                                                     cfg.dec_heads, rng, mlp_ratio=cfg.mlp_ratio))
        self.dec_ln = LayerNorm(st, "dec.ln", cfg.d_dec)
        n_up = int(np.log2(cfg.upsample))
        self.upsample_stages = [UpsampleStage(st, f"dec.up{i}", cfg.d_dec, rng)
                                for i in range(n_up)]
        self.occ_fc1 = Linear(st, "dec.occ1", cfg.d_dec, cfg.mlp_hidden, rng)
        self.occ_fc2 = Linear(st, "dec.occ2", cfg.mlp_hidden, cfg.mlp_hidden, rng)
        self.occ_out = Linear(st, "dec.occ3", cfg.mlp_hidden, 1, rng)

    # -- encoder ---------------------------------------------------------------

    def encode_t(self, points_with_normals: np.ndarray) -> Tensor:
        """(B, N_p, 6) -> pre-quantization latent z-tilde (B, 3hw, d_code)."""
        pn = np.asarray(points_with_normals)
        if pn.ndim == 2:
            pn = pn[None]
        if pn.shape[1] != self.cfg.n_points or pn.shape[2] != 6:
            raise ValueError(f"expected (B, {self.cfg.n_points}, 6) points, got {pn.shape}")
        feats = Tensor(fourier_encode(pn, self.cfg.fourier_bands).astype(self.store.dtype))
        q = reshape(self.query_tokens, (1, self.cfg.n_tokens, self.cfg.d_embed))
        x = q + self.cross(self.enc_ln_q(q), feats)
        for block in self.enc_blocks:
            x = block(x)
        z_hat = self.to_latent(self.enc_ln_out(x))
        return self.to_code(z_hat)

    def encode(self, cloud: PointCloudSample | np.ndarray) -> np.ndarray:
        """Single-sample inference API: returns z-tilde (3hw, d_code)."""
        pn = cloud if isinstance(cloud, np.ndarray) else np.concatenate(
            [cloud.points, cloud.normals], axis=1)
        with no_grad():
            return self.encode_t(pn[None] if pn.ndim == 2 else pn).data[0]

    # -- quantizer ---------------------------------------------------------------

    def quantize_t(self, z_tilde: Tensor,
                   straight_through: bool = True) -> tuple[Tensor, Tensor, np.ndarray]:
        """Returns (decoder-input z_q, gathered codebook rows, indices).

        With straight_through (training), the decoder input copies its gradient
        onto z-tilde and the gathered rows carry gradients into the codebook
        only. Without it (gradient verification), the gathered rows are used
        directly, which is differentiable wherever assignments are stable.
        """
        flat = z_tilde.data.reshape(-1, self.cfg.d_code)
        idx = kernels.nearest_code(flat, self.codebook.data)
        z_q_rows = reshape(embedding(self.codebook, idx), z_tilde.shape)
        z_q_dec = z_tilde + (z_q_rows - z_tilde).detach() if straight_through else z_q_rows
        lead = z_tilde.shape[:-2] if len(z_tilde.shape) > 2 else ()
        indices = idx.reshape(*lead, 3, self.cfg.h, self.cfg.w)
        return z_q_dec, z_q_rows, indices

    def quantize(self, z_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(3hw, d_code) -> (z_q (3hw, d_code), indices (3, h, w)).

        z_q holds the selected codebook rows exactly (no straight-through sum,
        which would differ by float rounding).
        """
        with no_grad():
            _, z_rows, idx = self.quantize_t(Tensor(np.asarray(z_tilde, dtype=self.store.dtype)))
        return z_rows.data, idx

    def lookup_codes(self, indices: np.ndarray) -> np.ndarray:
        """(3, h, w) indices -> z_q (3hw, d_code)."""
        return self.codebook.data[np.asarray(indices).reshape(-1)]

    # -- decoder ---------------------------------------------------------------

    def _plane_features(self, z_q: Tensor) -> Tensor:
        """(B, 3hw, d_code) -> upsampled plane stack (B, 3, H, W, d_dec)."""
        cfg = self.cfg
        B = z_q.shape[0]
        x = self.dec_in(z_q) + self.dec_pos
        for plane_block, fuse_block in zip(self.plane_blocks, self.fuse_blocks):
            xp = reshape(x, (B * 3, cfg.h * cfg.w, cfg.d_dec))
            xp = plane_block(xp)
            # planes concatenated along height: one token set of all 3hw cells
            x = fuse_block(reshape(xp, (B, cfg.n_tokens, cfg.d_dec)))
        x = self.dec_ln(x)
        planes = reshape(x, (B, 3, cfg.h, cfg.w, cfg.d_dec))
        for stage in self.upsample_stages:
            planes = stage(planes)
        return planes

    def decode_t(self, z_q: Tensor, queries: np.ndarray) -> Tensor:
        """(B, 3hw, d_code) + (B, M, 3) query points in [-1,1] -> logits (B, M)."""
        q = np.asarray(queries)
        if q.ndim == 2:
            q = q[None]
        if np.abs(q).max() > 1.0 + 1e-6:
            raise ValueError("query point outside [-1, 1]^3")
        B, M, _ = q.shape
        planes = self._plane_features(z_q)
        per_sample = []
        for b in range(B):
            pb = reshape(slice_axis(planes, 0, b, b + 1), planes.shape[1:])
            feats = None
            for p, (a0, a1) in enumerate(((0, 1), (1, 2), (0, 2))):  # XY, YZ, XZ
                plane = reshape(slice_axis(pb, 0, p, p + 1), pb.shape[1:])
                uv = np.ascontiguousarray(q[b][:, (a0, a1)])
                s = grid_sample(plane, uv)
                feats = s if feats is None else feats + s
            per_sample.append(reshape(feats, (1, M, self.cfg.d_dec)))
        feats = per_sample[0] if B == 1 else concat(per_sample, axis=0)
        hidden = gelu(self.occ_fc2(gelu(self.occ_fc1(feats))))
        return reshape(self.occ_out(hidden), (B, M))

    def decode_occupancy(self, z_q: np.ndarray, query_points: np.ndarray,
                         batch: int = 16384) -> np.ndarray:
        """Single-sample inference API: z_q (3hw, d_code), queries (M, 3) -> (M,) logits."""
        z = Tensor(np.asarray(z_q, dtype=self.store.dtype).reshape(1, self.cfg.n_tokens,
                                                                   self.cfg.d_code))
        pts = np.asarray(query_points, dtype=np.float32)
        out = np.empty(len(pts), dtype=np.float32)
        with no_grad():
            planes = self._plane_features(z)
            pb = reshape(slice_axis(planes, 0, 0, 1), planes.shape[1:])
            plane_data = [reshape(slice_axis(pb, 0, p, p + 1), pb.shape[1:]) for p in range(3)]
            for lo in range(0, len(pts), batch):
                chunk = pts[lo:lo + batch]
                if np.abs(chunk).max() > 1.0 + 1e-6:
                    raise ValueError("query point outside [-1, 1]^3")
                feats = None
                for plane, (a0, a1) in zip(plane_data, ((0, 1), (1, 2), (0, 2))):
                    s = grid_sample(plane, np.ascontiguousarray(chunk[:, (a0, a1)]))
                    feats = s if feats is None else feats + s
                hidden = gelu(self.occ_fc2(gelu(self.occ_fc1(feats))))
                out[lo:lo + batch] = self.occ_out(hidden).data[:, 0]
        return out

    # -- persistence ---------------------------------------------------------------

    def save(self, path, extra: dict[str, np.ndarray] | None = None):
        arrays = dict(self.store.state())
        for f in fields(self.cfg):
            arrays[f"meta.{f.name}"] = np.asarray([getattr(self.cfg, f.name)], dtype=np.int64)
        if extra:
            arrays.update(extra)
        save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path, dtype=np.float32) -> tuple["TriplaneVQVAE", dict[str, np.ndarray]]:
        arrays = load_checkpoint(path)
        kwargs = {f.name: int(arrays[f"meta.{f.name}"][0]) for f in fields(VQVAEConfig)
                  if f"meta.{f.name}" in arrays}
        model = cls(VQVAEConfig(**kwargs), dtype=dtype)
        model.store.load_state(arrays)
        extra = {k: v for k, v in arrays.items()
                 if k not in model.store.state() and not k.startswith("meta.")}
        return model, extra
