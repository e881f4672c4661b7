"""Stage-1 objective: occupancy reconstruction plus codebook/commitment terms."""

from __future__ import annotations

import numpy as np

from ..backend import Tensor, bce_with_logits, reshape, tmean, tsum

BETA_DEFAULT = 0.25
LAMBDA_REC_DEFAULT = 1.0
LAMBDA_CB_DEFAULT = 0.1


def reconstruction_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy between sigmoid(logits) and {0,1} labels."""
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if not np.all(np.isin(uniq, (0, 1))):
        raise ValueError(f"occupancy labels must be 0/1, got values {uniq[:5]}")
    flat = reshape(logits, (-1,))
    return bce_with_logits(flat, labels.reshape(-1).astype(flat.data.dtype))


def codebook_loss(z_tilde: Tensor, z_q: Tensor, beta: float = BETA_DEFAULT,
                  stop_gradients: bool = True) -> Tensor:
    """|| sg(z~) - z_q ||^2 + beta * || z~ - sg(z_q) ||^2, averaged over cells.

    The first term moves codebook rows toward the encoder output, the second
    (commitment, squared like the first to keep both on one scale) moves the
    encoder toward its assigned rows. stop_gradients=False drops both sg()
    wrappers, which makes the loss match finite differences for verification.
    """
    zt_blocked = z_tilde.detach() if stop_gradients else z_tilde
    zq_blocked = z_q.detach() if stop_gradients else z_q
    d_update = z_q - zt_blocked
    d_commit = z_tilde - zq_blocked
    cells = int(np.prod(z_tilde.shape[:-1]))
    term_update = tsum(d_update * d_update) * (1.0 / cells)
    term_commit = tsum(d_commit * d_commit) * (1.0 / cells)
    return term_update + beta * term_commit


def vqvae_loss(logits: Tensor, labels: np.ndarray, z_tilde: Tensor, z_q: Tensor,
               beta: float = BETA_DEFAULT, lambda_rec: float = LAMBDA_REC_DEFAULT,
               lambda_cb: float = LAMBDA_CB_DEFAULT,
               stop_gradients: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (total, rec, cb) with total = lambda_rec*rec + lambda_cb*cb."""
    rec = reconstruction_loss(logits, labels)
    cb = codebook_loss(z_tilde, z_q, beta=beta, stop_gradients=stop_gradients)
    return lambda_rec * rec + lambda_cb * cb, rec, cb
