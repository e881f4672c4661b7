"""Stage-1 training loop: encode -> quantize -> decode fresh queries -> loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..backend import AdamW, NumericsError, check_finite, cosine_lr, no_grad
from ..shapes.dataset import Dataset
from ..shapes.sampling import sample_query_points
from .losses import vqvae_loss
from .model import TriplaneVQVAE, VQVAEConfig


@dataclass
class TrainReport:
    epochs_run: int
    final_rec: float
    final_cb: float
    held_out_rec: float
    usage_fraction: float
    checkpoint: str
    log_csv: str
    aborted: bool = False


def split_holdout(ds: Dataset, holdout_per_class: int) -> tuple[list[int], list[int]]:
    """Last holdout_per_class records of every class are held out."""
    train, held = [], []
    for c in range(ds.classes):
        ids = list(range(c * ds.per_class, (c + 1) * ds.per_class))
        cut = len(ids) - holdout_per_class
        train.extend(ids[:cut])
        held.extend(ids[cut:])
    return train, held


def _held_out_rec(model: TriplaneVQVAE, ds: Dataset, ids: list[int]) -> float:
    from ..backend import Tensor, bce_with_logits
    total = 0.0
    with no_grad():
        for i in ids:
            rec = ds[i]
            z = model.encode(rec.cloud)
            z_q, _ = model.quantize(z)
            logits = model.decode_occupancy(z_q, rec.queries.points)
            total += float(bce_with_logits(Tensor(logits),
                                           rec.queries.occupancy.astype(np.float32)).data)
    return total / max(1, len(ids))


def train_vqvae(ds: Dataset, cfg: VQVAEConfig, out_dir, *, epochs: int = 40,
                batch_size: int = 8, lr: float = 3e-4, weight_decay: float = 0.0,
                beta: float = 0.25, lambda_rec: float = 1.0, lambda_cb: float = 0.1,
                queries_uniform: int = 2048, queries_near: int = 2048,
                sigma: float = 0.05, holdout_per_class: int = 0, seed: int = 0,
                time_budget_s: float | None = None, log_every: int = 0,
                dead_reinit: bool = True,
                checkpoint_name: str = "vqvae.ckpt") -> TrainReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / checkpoint_name
    csv_path = out_dir / "train_vqvae.csv"

    if ds.n_points != cfg.n_points:
        raise ValueError(f"dataset has {ds.n_points} points/shape, model wants {cfg.n_points}")

    model = TriplaneVQVAE(cfg, seed=seed)
    opt = AdamW(model.store.parameters(), lr=lr, weight_decay=weight_decay)
    train_ids, held_ids = split_holdout(ds, holdout_per_class)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    reinit_rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))

    steps_per_epoch = max(1, (len(train_ids) + batch_size - 1) // batch_size)
    total_steps = epochs * steps_per_epoch
    k = cfg.codebook_size

    usage = np.zeros(k, dtype=np.int64)
    recent_rows = np.zeros((0, cfg.d_code), dtype=np.float32)
    start = time.time()
    step = 0
    epochs_run = 0
    last_rec = last_cb = float("nan")
    usage_fraction = 0.0
    aborted = False

    with open(csv_path, "w") as log:
        log.write("epoch,rec,cb,usage_fraction,held_out_rec\n")
        for epoch in range(epochs):
            order = np.array(train_ids)
            shuffle_rng.shuffle(order)
            usage[:] = 0
            rec_sum = cb_sum = 0.0
            n_batches = 0
            for lo in range(0, len(order), batch_size):
                ids = order[lo:lo + batch_size]
                points = np.stack([ds.points_with_normals(i) for i in ids])
                qs, labels = [], []
                for i in ids:
                    q = sample_query_points(ds.spec(int(i)), queries_uniform, queries_near,
                                            sigma, np.random.SeedSequence((seed, epoch, int(i))))
                    qs.append(q.points)
                    labels.append(q.occupancy)
                queries = np.stack(qs)
                labels = np.stack(labels).astype(np.float32)

                z_tilde = model.encode_t(points)
                z_q_st, z_q_rows, idx = model.quantize_t(z_tilde)
                logits = model.decode_t(z_q_st, queries)
                total, rec, cb = vqvae_loss(logits, labels, z_tilde, z_q_rows,
                                            beta=beta, lambda_rec=lambda_rec,
                                            lambda_cb=lambda_cb)
                try:
                    check_finite(total, "stage-1 loss")
                except NumericsError:
                    # keep the last epoch checkpoint on disk and stop
                    aborted = True
                    break
                opt.zero_grad()
                total.backward()
                opt.step(lr=cosine_lr(lr, step, total_steps))
                step += 1

                usage += np.bincount(idx.reshape(-1), minlength=k)
                recent_rows = z_tilde.data.reshape(-1, cfg.d_code).astype(np.float32)
                rec_sum += float(rec.data)
                cb_sum += float(cb.data)
                n_batches += 1
                if log_every and step % log_every == 0:
                    print(f"step {step}/{total_steps} rec {float(rec.data):.4f} "
                          f"cb {float(cb.data):.4f} ({time.time() - start:.0f}s)")

            if aborted:
                break
            last_rec = rec_sum / max(1, n_batches)
            last_cb = cb_sum / max(1, n_batches)
            usage_fraction = float((usage > 0).mean())
            held = _held_out_rec(model, ds, held_ids) if held_ids else float("nan")
            log.write(f"{epoch},{last_rec:.6f},{last_cb:.6f},{usage_fraction:.4f},{held:.6f}\n")
            log.flush()

            # dead-entry reinit: unused rows jump to recent encoder outputs
            dead = np.flatnonzero(usage == 0) if dead_reinit else np.array([], dtype=np.int64)
            if dead.size and recent_rows.shape[0]:
                picks = reinit_rng.integers(0, recent_rows.shape[0], size=dead.size)
                cb_data = model.codebook.data.copy()
                cb_data[dead] = recent_rows[picks]
                model.codebook.data = cb_data

            model.save(ckpt_path, extra={"quant.usage": usage.copy()})
            epochs_run = epoch + 1
            if time_budget_s is not None and time.time() - start > time_budget_s:
                break

    if not ckpt_path.exists():
        model.save(ckpt_path, extra={"quant.usage": usage.copy()})
    held_final = _held_out_rec(model, ds, held_ids) if held_ids else float("nan")
    return TrainReport(epochs_run=epochs_run, final_rec=last_rec, final_cb=last_cb,
                       held_out_rec=held_final, usage_fraction=usage_fraction,
                       checkpoint=str(ckpt_path), log_csv=str(csv_path), aborted=aborted)
