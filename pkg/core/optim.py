"""Adam, plain SGD and the 1-cycle learning-rate schedule.

Parameters travel as ``{name: ndarray}`` mappings; every step returns new
arrays and never mutates its inputs.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from config.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, FINAL_LR_DIVISOR
from utils.errors import ShapeError


@dataclass
class AdamState:
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam update for every parameter that has a gradient.

    Parameters absent from ``grads`` are returned unchanged and keep no moments.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        _check_shape(name, value, grad)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: float,
) -> Dict[str, np.ndarray]:
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        _check_shape(name, value, grad)
        updated[name] = value - lr * grad
    return updated


def _check_shape(name: str, value: np.ndarray, grad: np.ndarray) -> None:
    if value.shape != grad.shape:
        raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter has {value.shape}")


@dataclass(frozen=True)
class OneCycleSchedule:
    """Linear warmup from 0 to ``max_lr``, then cosine anneal to max_lr / 1000."""

    max_lr: float
    total_steps: int
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError(f"max_lr must be positive, got {self.max_lr}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be at least 1, got {self.total_steps}")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must lie in (0, 1), got {self.warmup_fraction}")

    @property
    def warmup_steps(self) -> float:
        return self.warmup_fraction * self.total_steps

    @property
    def final_lr(self) -> float:
        return self.max_lr / FINAL_LR_DIVISOR

    def lr(self, step: int) -> float:
        return one_cycle_lr(step, self)


def one_cycle_lr(step: int, schedule: OneCycleSchedule) -> float:
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    warmup = schedule.warmup_steps
    if step < warmup:
        return schedule.max_lr * step / warmup
    span = (schedule.total_steps - 1) - warmup
    if span <= 0:
        return schedule.max_lr
    progress = (step - warmup) / span
    final = schedule.final_lr
    return final + (schedule.max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * progress))
