"""End-to-end fitting: shuffled mini-batch epochs, scheduled discriminative
Adam updates, per-epoch validation, checkpointing, and TTA prediction.

The per-step loss is the mean over the batch of each sample's summed
per-label binary cross-entropy.  The schedule length is always
``epochs * ceil(n_train / batch_size)``, computed here rather than
user-supplied, so the learning-rate trace and the optimizer step count agree
exactly.
"""

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import batch_iter, derive_rng, preprocess_eval, tta_views
from .errors import ConfigError, TrainAbort, ValidationError
from .model import save_checkpoint
from .optim import (
    AdamState,
    GroupLrPolicy,
    PlateauDecay,
    ScheduleConfig,
    adam_step,
    group_scaled_lrs,
    one_cycle_lr,
)

BEST_CHECKPOINT = "best.ckpt"
FINAL_CHECKPOINT = "final.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 64
    max_lr: float = 3e-3
    warm_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 2000.0
    literal_decay_segment: bool = False
    group_policy: GroupLrPolicy = field(default_factory=GroupLrPolicy)
    scheduler: str = "one_cycle"  # or "plateau"
    plateau_drop: float = 10.0
    plateau_tolerance: float = 0.0
    seed: int = 0
    nan_guard: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.scheduler not in ("one_cycle", "plateau"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")


@dataclass
class FitReport:
    train_loss: list
    val_loss: list
    lr_trace: list
    best_epoch: int
    epochs_completed: int
    total_steps: int
    seed: int
    epoch_seconds: list  # wall time; kept out of the deterministic report file

    def to_json_obj(self):
        # wall time is excluded so reruns of the same (config, seed) produce
        # byte-identical report files; timings go in their own sidecar
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "epochs_completed": self.epochs_completed,
            "total_steps": self.total_steps,
            "seed": self.seed,
        }

    def write(self, out_dir):
        with open(os.path.join(out_dir, "fit_report.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=2)
            fh.write("\n")
        with open(os.path.join(out_dir, "fit_timing.json"), "w", encoding="utf-8") as fh:
            json.dump({"epoch_seconds": self.epoch_seconds}, fh, indent=2)
            fh.write("\n")
        with open(os.path.join(out_dir, "lr_trace.csv"), "w", encoding="utf-8") as fh:
            fh.write("step,lr\n")
            for i, lr in enumerate(self.lr_trace):
                fh.write(f"{i},{float(lr)!r}\n")


def _per_sample_bce(logits, targets):
    z = np.asarray(logits, dtype=np.float64)
    elem = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    return elem.sum(axis=1)


def validate(model, records, vocab, policy, store, batch_size=64) -> float:
    """Mean per-sample summed-label BCE under eval preprocessing; touches no
    parameters."""
    if not records:
        raise ValidationError("validate: empty record set")
    losses = []
    for xs, ys in batch_iter(records, vocab, policy, batch_size, store, seed=0, train=False):
        logits = model.forward(xs).data
        losses.append(_per_sample_bce(logits, ys))
    return float(np.mean(np.concatenate(losses)))


def fit(model, train_records, valid_records, vocab, policy, cfg: TrainConfig, store, out_dir=None):
    """Train, tracking losses and the lr trace; returns the FitReport.

    Checkpoints (when ``out_dir`` is given): ``best.ckpt`` at the lowest
    validation loss, ``final.ckpt`` after the last completed epoch.  A
    non-finite loss aborts (when the guard is on) leaving the last completed
    epoch's checkpoints in place; skipping bad batches instead would silently
    desynchronize the schedule from the step count.
    """
    if not train_records or not valid_records:
        raise ValidationError("fit: train and valid record sets must be non-empty")
    if model.config.head_outputs != len(vocab):
        raise ConfigError(
            f"model head has {model.config.head_outputs} outputs but vocabulary has {len(vocab)} labels"
        )
    steps_per_epoch = math.ceil(len(train_records) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    schedule = None
    plateau = None
    if cfg.scheduler == "one_cycle":
        schedule = ScheduleConfig(
            max_lr=cfg.max_lr,
            total_steps=total_steps,
            warm_frac=cfg.warm_frac,
            start_div=cfg.start_div,
            final_div=cfg.final_div,
            literal_decay_segment=cfg.literal_decay_segment,
        )
    else:
        plateau = PlateauDecay(cfg.max_lr, drop_factor=cfg.plateau_drop, tolerance=cfg.plateau_tolerance)

    groups = model.layer_groups()
    group_params = [
        [p for _, p in groups.group1],
        [p for _, p in groups.group2],
        [p for _, p in groups.group3],
    ]
    states = [AdamState.for_params(ps) for ps in group_params]

    report = FitReport(
        train_loss=[],
        val_loss=[],
        lr_trace=[],
        best_epoch=-1,
        epochs_completed=0,
        total_steps=total_steps,
        seed=cfg.seed,
        epoch_seconds=[],
    )
    best_val = math.inf
    step = 0
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        epoch_losses = []
        for xs, ys in batch_iter(
            train_records, vocab, policy, cfg.batch_size, store, seed=cfg.seed, epoch=epoch
        ):
            logits = model.forward(xs)
            loss = ad.bce_sum_loss(logits, ys)
            loss_value = float(loss.data)
            if cfg.nan_guard and not math.isfinite(loss_value):
                raise TrainAbort(
                    f"non-finite loss at epoch {epoch} step {step}; last completed epoch's "
                    "checkpoints are retained"
                )
            model.zero_grad()
            loss.backward()
            lr = one_cycle_lr(schedule, step) if schedule is not None else plateau.lr
            lrs = group_scaled_lrs(lr, cfg.group_policy)
            for params, state, glr in zip(group_params, states, lrs):
                if params:
                    adam_step(params, [p.grad for p in params], state, glr)
            report.lr_trace.append(lr)
            epoch_losses.append(loss_value)
            step += 1
        report.train_loss.append(float(np.mean(epoch_losses)))
        val = validate(model, valid_records, vocab, policy, store, batch_size=cfg.batch_size)
        report.val_loss.append(val)
        report.epochs_completed = epoch + 1
        report.epoch_seconds.append(time.perf_counter() - tic)
        if plateau is not None:
            plateau.update(val)
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            if out_dir is not None:
                save_checkpoint(model, os.path.join(out_dir, BEST_CHECKPOINT), vocab)
        if out_dir is not None:
            save_checkpoint(model, os.path.join(out_dir, FINAL_CHECKPOINT), vocab)
        if plateau is not None and plateau.exhausted:
            break
    if out_dir is not None:
        report.write(out_dir)
    return report


def predict_tta(model, image, policy, n=5, rng=None) -> np.ndarray:
    """Mean sigmoid probability over ``n`` augmented views of one image."""
    views = tta_views(image, policy, n=n, rng=rng)
    logits = model.forward(np.stack(views))
    probs = ad.sigmoid(logits).data
    return probs.mean(axis=0)


def predict_scores(model, records, vocab, policy, store, tta=5, seed=0) -> np.ndarray:
    """(N,K) TTA probability matrix, rows in record order; image i's views
    are drawn from the (seed, i) substream."""
    if model.config.head_outputs != len(vocab):
        raise ConfigError(
            f"model head has {model.config.head_outputs} outputs but vocabulary has {len(vocab)} labels"
        )
    rows = []
    for i, rec in enumerate(records):
        raw = store.get(rec.image_path)
        if tta < 1:
            x = preprocess_eval(raw, policy)
            probs = ad.sigmoid(model.forward(x[None])).data[0]
        else:
            probs = predict_tta(model, raw, policy, n=tta, rng=derive_rng(seed, 2, i))
        rows.append(probs)
    return np.stack(rows)
