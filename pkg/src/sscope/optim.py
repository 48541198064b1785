"""Seedable, deterministic optimizers and LR schedules.

Two families: SGD with Nesterov momentum (coupled weight decay) and AdamW
(decoupled decay, applied to the parameter before the moment update).
Schedules are linear warmup into cosine decay.

Optimizer state is keyed by parameter name and created lazily the first time
a key is stepped, so a parameter that is never stepped accumulates no state.
Per-block learning-rate and weight-decay scale factors support the layer-wise
mitigation experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, UsageError

__all__ = ["OptimizerConfig", "ScheduleConfig", "Optimizer", "lr_at"]

SGD_NESTEROV = "sgd_nesterov"
ADAMW = "adamw"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str
    peak_lr: float
    weight_decay: float = 0.0
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8

    def validate(self):
        if self.kind not in (SGD_NESTEROV, ADAMW):
            raise UsageError(f"unknown optimizer kind {self.kind!r}")
        if self.peak_lr <= 0:
            raise UsageError("peak_lr must be positive")
        if self.weight_decay < 0:
            raise UsageError("weight_decay must be >= 0")
        if not 0 <= self.momentum < 1:
            raise UsageError("momentum must be in [0, 1)")
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise UsageError("betas must be in (0, 1)")
        return self


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int
    warmup_share: float = 0.02
    min_lr: float = 0.0

    def validate(self, peak_lr=None):
        if self.total_steps <= 0:
            raise UsageError("total_steps must be positive")
        if not 0 <= self.warmup_share < 1:
            raise UsageError("warmup_share must be in [0, 1)")
        if peak_lr is not None and not 0 < self.min_lr <= peak_lr:
            raise UsageError("need 0 < min_lr <= peak_lr")
        return self

    @property
    def warmup_steps(self):
        return int(round(self.warmup_share * self.total_steps))


def lr_at(t: int, schedule: ScheduleConfig, peak_lr: float) -> float:
    """Linear ramp 0 -> peak over the warmup steps, then cosine to min_lr."""
    T = schedule.total_steps
    if not 0 <= t < T:
        raise UsageError(f"step {t} outside schedule [0, {T})")
    w = schedule.warmup_steps
    if t < w:
        return peak_lr * t / w
    span = max(T - 1 - w, 1)
    frac = (t - w) / span
    return schedule.min_lr + 0.5 * (peak_lr - schedule.min_lr) * (
        1.0 + math.cos(math.pi * frac)
    )


def _block_of(key: str) -> int:
    return int(key.split(".", 1)[0][1:])


@dataclass
class Optimizer:
    config: OptimizerConfig
    schedule: ScheduleConfig
    lr_block_scale: dict = field(default_factory=dict)
    wd_block_scale: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    def __post_init__(self):
        self.config.validate()
        self.schedule.validate()

    def _state_for(self, key, arr):
        st = self.state.get(key)
        if st is None:
            if self.config.kind == SGD_NESTEROV:
                st = {"v": np.zeros_like(arr)}
            else:
                st = {"m": np.zeros_like(arr), "v": np.zeros_like(arr), "t": 0}
            self.state[key] = st
        return st

    def step(self, params: dict, grads: dict, t: int):
        """Apply one update, in place, to exactly the keys present in params."""
        base_lr = lr_at(t, self.schedule, self.config.peak_lr)
        for key in params:
            g = grads[key]
            if not np.isfinite(g).all():
                raise NumericError(
                    f"non-finite gradient at {key}", _block_of(key)
                )
            p = params[key]
            block = _block_of(key)
            lr = base_lr * self.lr_block_scale.get(block, 1.0)
            wd = self.config.weight_decay * self.wd_block_scale.get(block, 1.0)
            st = self._state_for(key, p)
            if self.config.kind == SGD_NESTEROV:
                # velocity lookahead: v <- mu*v + g; p <- p - lr*(g + mu*v)
                if wd:
                    g = g + (wd * p).astype(g.dtype)
                mu = self.config.momentum
                v = st["v"]
                v *= mu
                v += g
                p -= (lr * (g + mu * v)).astype(p.dtype)
            else:
                # decoupled decay precedes the moment update
                if wd:
                    p *= 1.0 - lr * wd
                b1, b2 = self.config.betas
                st["t"] += 1
                m, v = st["m"], st["v"]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * np.square(g)
                mhat = m / (1.0 - b1 ** st["t"])
                vhat = v / (1.0 - b2 ** st["t"])
                p -= (lr * mhat / (np.sqrt(vhat) + self.config.epsilon)).astype(
                    p.dtype
                )
