"""Nesterov SGD with a cosine schedule, and the EMA teacher update."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import GradientSet, Network, ShapeError


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, layer: int, which: str):
        super().__init__(f"non-finite {which} gradient in layer {layer}")
        self.layer = layer
        self.which = which


def cosine_lr(t: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= t <= total_steps:
        raise ValueError(f"step {t} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


@dataclass
class SgdState:
    base_lr: float = 0.1
    momentum: float = 0.9
    l2: float = 1e-4
    total_steps: int = 1
    step: int = 0
    velocity: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Network, **kwargs) -> SgdState:
        state = cls(**kwargs)
        state.velocity = [np.zeros_like(p) for p in net.params()]
        return state

    @property
    def lr(self) -> float:
        return cosine_lr(min(self.step, self.total_steps), self.total_steps, self.base_lr)


def sgd_step(net: Network, grads: GradientSet, state: SgdState) -> float:
    """Apply one Nesterov step in place. Returns the learning rate used.

    With ``g~ = g + l2*theta``: ``v <- mu*v - lr*g~`` then
    ``theta <- theta + mu*v - lr*g~``.
    """
    params = net.params()
    garrs = grads.arrays()
    if len(garrs) != len(params) or len(state.velocity) != len(params):
        raise ShapeError("gradient/velocity buffers do not match the network")
    for i, g in enumerate(garrs):
        if g.shape != params[i].shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, parameter has {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(i // 2, "weight" if i % 2 == 0 else "bias")
    if state.step >= state.total_steps:
        raise ValueError("optimizer already ran total_steps steps")

    lr = state.lr
    mu = state.momentum
    for p, g, v in zip(params, garrs, state.velocity):
        g_eff = g + state.l2 * p if state.l2 else g
        v *= mu
        v -= lr * g_eff
        p += mu * v - lr * g_eff
    state.step += 1
    return lr


@dataclass
class EmaTeacher:
    net: Network
    decay: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {self.decay}")

    @classmethod
    def from_student(cls, student: Network, decay: float = 0.999) -> EmaTeacher:
        return cls(student.copy(), decay)


def ema_update(teacher: EmaTeacher, student: Network) -> EmaTeacher:
    if not teacher.net.same_shape(student):
        raise ShapeError("teacher and student shapes differ")
    d = teacher.decay
    for tp, sp in zip(teacher.net.params(), student.params()):
        tp[...] = d * tp + (1.0 - d) * sp
    return teacher
