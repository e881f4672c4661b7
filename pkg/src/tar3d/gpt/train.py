"""Stage-2 training: teacher-forced next-token prediction over exported sequences."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..backend import AdamW, NumericsError, check_finite, cosine_lr
from .model import GPT, Condition, GPTConfig


@dataclass
class GPTTrainReport:
    epochs_run: int
    final_loss: float
    held_out_ppl: float
    checkpoint: str
    log_csv: str
    aborted: bool = False


def _conditions_for(ids_or_rows, batch_idx) -> list[Condition]:
    conds = []
    for i in batch_idx:
        item = ids_or_rows[int(i)]
        if np.ndim(item) == 0:
            conds.append(Condition.for_class(int(item)))
        else:
            conds.append(Condition.external(np.asarray(item)))
    return conds


def _eval_loss(model: GPT, sequences, cond_source, ids) -> float:
    from ..backend import no_grad
    if not len(ids):
        return float("nan")
    total = 0.0
    with no_grad():
        for i in ids:
            logits = model.forward(sequences[i:i + 1], _conditions_for(cond_source, [i]))
            total += float(model.gpt_loss(logits, sequences[i:i + 1]).data)
    return total / len(ids)


def train_gpt(sequences: np.ndarray, cond_source, cfg: GPTConfig, out_dir, *,
              epochs: int = 60, batch_size: int = 8, lr: float = 3e-4,
              weight_decay: float = 0.0, holdout: int = 0, seed: int = 0,
              time_budget_s: float | None = None, log_every: int = 0,
              target_loss: float | None = None,
              checkpoint_name: str = "gpt.ckpt") -> GPTTrainReport:
    """cond_source: per-sequence class ids (N,) or external embedding rows (N, P, D)."""
    sequences = np.asarray(sequences)
    if sequences.shape[1] != cfg.seq_len:
        raise ValueError(f"sequences are length {sequences.shape[1]}, model wants {cfg.seq_len}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / checkpoint_name
    csv_path = out_dir / "train_gpt.csv"

    model = GPT(cfg, seed=seed)
    opt = AdamW(model.store.parameters(), lr=lr, weight_decay=weight_decay)
    n = len(sequences)
    train_ids = np.arange(n - holdout)
    held_ids = np.arange(n - holdout, n)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((seed, 21)))
    drop_rng = np.random.default_rng(np.random.SeedSequence((seed, 22)))

    steps_per_epoch = max(1, (len(train_ids) + batch_size - 1) // batch_size)
    total_steps = epochs * steps_per_epoch
    start = time.time()
    step = 0
    epochs_run = 0
    last_loss = float("nan")
    aborted = False

    with open(csv_path, "w") as log:
        log.write("epoch,loss,held_out_ppl\n")
        for epoch in range(epochs):
            order = train_ids.copy()
            shuffle_rng.shuffle(order)
            loss_sum = 0.0
            n_batches = 0
            for lo in range(0, len(order), batch_size):
                ids = order[lo:lo + batch_size]
                batch = sequences[ids]
                conds = _conditions_for(cond_source, ids)
                conds = [Condition.null(length=c.prefix_len())
                         if drop_rng.uniform() < cfg.cond_dropout else c
                         for c in conds]
                logits = model.forward(batch, conds)
                loss = model.gpt_loss(logits, batch)
                try:
                    check_finite(loss, "stage-2 loss")
                except NumericsError:
                    aborted = True
                    break
                opt.zero_grad()
                loss.backward()
                opt.step(lr=cosine_lr(lr, step, total_steps))
                step += 1
                loss_sum += float(loss.data)
                n_batches += 1
                if log_every and step % log_every == 0:
                    print(f"step {step}/{total_steps} loss {float(loss.data):.4f} "
                          f"({time.time() - start:.0f}s)")
            if aborted:
                break
            last_loss = loss_sum / max(1, n_batches)
            held_loss = _eval_loss(model, sequences, cond_source, held_ids)
            held_ppl = float(np.exp(held_loss)) if np.isfinite(held_loss) else float("nan")
            log.write(f"{epoch},{last_loss:.6f},{held_ppl:.4f}\n")
            log.flush()
            model.save(ckpt_path)
            epochs_run = epoch + 1
            if target_loss is not None and last_loss < target_loss:
                break
            if time_budget_s is not None and time.time() - start > time_budget_s:
                break

    if not ckpt_path.exists():
        model.save(ckpt_path)
    held_loss = _eval_loss(model, sequences, cond_source, held_ids)
    held_ppl = float(np.exp(held_loss)) if np.isfinite(held_loss) else float("nan")
    return GPTTrainReport(epochs_run=epochs_run, final_loss=last_loss, held_out_ppl=held_ppl,
                          checkpoint=str(ckpt_path), log_csv=str(csv_path), aborted=aborted)
