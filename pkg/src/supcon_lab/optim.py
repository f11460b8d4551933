"""AdamW with per-group learning rates, and early stopping on dev EER.

No learning-rate schedule and no gradient clipping, by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NonFiniteError
from .model import BIAS_NAMES, ModelParams, group_of


def _default_groups():
    return {"encoder": 1e-5, "projection": 5e-4, "classifier": 5e-4}


@dataclass(frozen=True)
class OptimConfig:
    groups: dict = field(default_factory=_default_groups)  # group name -> learning rate
    weight_decay: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10

    def __post_init__(self):
        for g, lr in self.groups.items():
            if not lr > 0:
                raise DomainError(f"learning rate for group {g!r} must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError("betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.eps <= 0:
            raise DomainError("weight_decay must be >= 0 and eps > 0")
        if self.patience < 1:
            raise DomainError("patience must be >= 1")

    def lr_for(self, name: str) -> float:
        g = group_of(name)
        if g not in self.groups:
            raise DomainError(f"no learning rate configured for group {g!r}")
        return self.groups[g]


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: ModelParams, grads: dict, state: AdamWState, config: OptimConfig) -> None:
    """One in-place AdamW update of every parameter that has a gradient.

    Parameters without an entry in ``grads`` (frozen groups) are untouched.
    Weight decay is decoupled and skips biases::

        p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in group {group_of(name)!r} ({name})")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        p = params.arrays[name]
        if g.shape != p.shape:
            raise DomainError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        lr = config.lr_for(name)
        update = (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        if name not in BIAS_NAMES and config.weight_decay:
            update = update + config.weight_decay * p
        params.arrays[name] = p - lr * update


@dataclass
class EarlyStopState:
    best_metric: float = float("inf")
    best_step: int = -1
    epochs_since_best: int = 0
    step: int = 0


def early_stop_update(state: EarlyStopState, current_dev_eer: float, patience: int):
    """Record one evaluation. Returns ``(state, should_stop, is_new_best)``.

    Only a strictly lower EER counts as improvement, so the first occurrence
    of the minimum is the one kept.
    """
    if not 0.0 <= current_dev_eer <= 100.0:
        raise DomainError(f"EER must lie in [0, 100], got {current_dev_eer}")
    state.step += 1
    is_new_best = current_dev_eer < state.best_metric
    if is_new_best:
        state.best_metric = float(current_dev_eer)
        state.best_step = state.step
        state.epochs_since_best = 0
    else:
        state.epochs_since_best += 1
    return state, state.epochs_since_best >= patience, is_new_best
