"""Adam, the one-cycle cosine learning-rate schedule, and per-group scaling.

The schedule concatenates two cosine segments: a warm ramp from
``max_lr/start_div`` up to ``max_lr`` over the warm fraction of steps, then an
anneal from ``max_lr`` down to ``max_lr/final_div`` over the remainder.  Layer
groups train at scaled copies of the scheduled rate (by default 1/9, 1/3 and 1
of it, nearest the input first).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, OptimError


@dataclass(frozen=True)
class ScheduleConfig:
    max_lr: float
    total_steps: int
    warm_frac: float = 0.3
    start_div: float = 25.0
    final_div: float = 2000.0
    # Hold the post-anneal tail flat instead of stretching the anneal over all
    # remaining steps; the anneal then spans warm_frac worth of steps too.
    literal_decay_segment: bool = False

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ConfigError(f"max_lr must be positive, got {self.max_lr}")
        if self.total_steps < 2:
            raise ConfigError(f"total_steps must be >= 2, got {self.total_steps}")
        if not 0.0 < self.warm_frac < 1.0:
            raise ConfigError(f"warm_frac must be in (0, 1), got {self.warm_frac}")
        if self.start_div <= 1 or self.final_div <= 1:
            raise ConfigError("start_div and final_div must both exceed 1")

    @property
    def warm_steps(self) -> int:
        w = int(round(self.warm_frac * self.total_steps))
        return min(max(w, 1), self.total_steps - 1)


def cosine_segment(lr1: float, lr2: float, total: int, i: int) -> float:
    """Value at step ``i`` of a cosine interpolation from lr1 to lr2 over
    ``total`` steps; the segment starts exactly at lr1 and never quite reaches
    lr2 (the next segment supplies it)."""
    if total < 1:
        raise ContractError(f"cosine segment length must be >= 1, got {total}")
    if not 0 <= i <= total - 1:
        raise ContractError(f"step {i} outside segment [0, {total - 1}]")
    if i == 0:
        return lr1  # cos(0)=1; short-circuit so the endpoint is exact
    return lr2 + (lr1 - lr2) / 2.0 * (1.0 + math.cos(i * math.pi / total))


def one_cycle_lr(cfg: ScheduleConfig, i: int) -> float:
    """Learning rate at global step ``i`` of the one-cycle schedule."""
    if not 0 <= i < cfg.total_steps:
        raise ContractError(f"step {i} outside schedule [0, {cfg.total_steps - 1}]")
    w = cfg.warm_steps
    if i < w:
        return cosine_segment(cfg.max_lr / cfg.start_div, cfg.max_lr, w, i)
    floor = cfg.max_lr / cfg.final_div
    if cfg.literal_decay_segment:
        decay = min(w, cfg.total_steps - w)
        if i - w >= decay:
            return floor
        return cosine_segment(cfg.max_lr, floor, decay, i - w)
    return cosine_segment(cfg.max_lr, floor, cfg.total_steps - w, i - w)


def schedule_values(cfg: ScheduleConfig) -> np.ndarray:
    """The whole schedule as an array, one value per optimizer step."""
    return np.array([one_cycle_lr(cfg, i) for i in range(cfg.total_steps)])


class PlateauDecay:
    """Alternative scheduler: divide the rate by ``drop_factor`` whenever the
    validation loss rises by more than ``tolerance`` over the best seen.
    Threshold values are configuration choices, not part of the recipe."""

    def __init__(self, initial_lr, drop_factor=10.0, tolerance=0.0, min_lr=1e-8):
        if initial_lr <= 0 or drop_factor <= 1 or min_lr <= 0:
            raise ConfigError("PlateauDecay needs initial_lr > 0, drop_factor > 1, min_lr > 0")
        self.lr = float(initial_lr)
        self.drop_factor = float(drop_factor)
        self.tolerance = float(tolerance)
        self.min_lr = float(min_lr)
        self.best = math.inf

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
        elif val_loss > self.best + self.tolerance:
            self.lr /= self.drop_factor
        return self.lr

    @property
    def exhausted(self) -> bool:
        return self.lr < self.min_lr


@dataclass(frozen=True)
class GroupLrPolicy:
    """Per-group learning-rate multipliers, input-nearest group first."""

    multipliers: tuple = (1.0 / 9.0, 1.0 / 3.0, 1.0)

    def __post_init__(self):
        if len(self.multipliers) != 3 or any(m <= 0 for m in self.multipliers):
            raise ConfigError(f"need 3 positive multipliers, got {self.multipliers}")


def group_scaled_lrs(base_lr: float, policy: GroupLrPolicy = GroupLrPolicy()):
    """Scale the head rate down for earlier groups: default (lr/9, lr/3, lr)."""
    if base_lr <= 0:
        raise ContractError(f"base_lr must be positive, got {base_lr}")
    return tuple(base_lr * m for m in policy.multipliers)


@dataclass
class AdamState:
    """First/second moment accumulators mirroring one parameter list."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place on ``params``.

    ``params`` are Tensors (or anything with a mutable ``.data`` array),
    ``grads`` the matching gradient arrays.  Non-finite gradients abort the
    step before any parameter is touched.
    """
    if lr <= 0:
        raise OptimError(f"adam_step: lr must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise OptimError("adam_step: params/grads/state length mismatch")
    for i, g in enumerate(grads):
        if g is None:
            raise OptimError(f"adam_step: missing gradient for parameter {i}")
        if not np.isfinite(g).all():
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise OptimError(f"adam_step: parameter {i} has {bad} non-finite gradient entries")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
