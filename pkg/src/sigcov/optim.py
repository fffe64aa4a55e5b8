"""Adam and Nadam steps on lists of numpy arrays or torch tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import TrainingDivergedError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class MomentState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def _finite(g) -> bool:
    if isinstance(g, torch.Tensor):
        return bool(torch.isfinite(g).all())
    return bool(np.all(np.isfinite(g)))


def _zeros_like(p):
    return torch.zeros_like(p) if isinstance(p, torch.Tensor) else np.zeros_like(p)


def _update_moments(grads, state, beta1, beta2):
    for g in grads:
        if not _finite(g):
            raise TrainingDivergedError("non-finite gradient", {"step": state.t + 1})
    if not state.m:
        state.m = [_zeros_like(g) for g in grads]
        state.v = [_zeros_like(g) for g in grads]
    state.t += 1
    state.m = [beta1 * m + (1 - beta1) * g for m, g in zip(state.m, grads)]
    state.v = [beta2 * v + (1 - beta2) * g * g for v, g in zip(state.v, grads)]


def adam_step(params, grads, state: MomentState, lr: float,
              beta1=BETA1, beta2=BETA2, eps=EPS) -> list:
    _update_moments(grads, state, beta1, beta2)
    t = state.t
    out = []
    for p, m, v in zip(params, state.m, state.v):
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out.append(p - lr * m_hat / (v_hat**0.5 + eps))
    return out


def nadam_step(params, grads, state: MomentState, lr: float,
               beta1=BETA1, beta2=BETA2, eps=EPS) -> list:
    """Adam with a Nesterov look-ahead on the first moment (constant momentum schedule)."""
    _update_moments(grads, state, beta1, beta2)
    t = state.t
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m_hat = beta1 * m / (1 - beta1**(t + 1)) + (1 - beta1) * g / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out.append(p - lr * m_hat / (v_hat**0.5 + eps))
    return out


STEPS = {"adam": adam_step, "nadam": nadam_step}


class Optimizer:
    """Applies one of the steps in place to torch parameters."""

    def __init__(self, params, lr: float, kind: str = "nadam"):
        if kind not in STEPS:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.params = list(params)
        self.lr = lr
        self.step_fn = STEPS[kind]
        self.state = MomentState()

    @torch.no_grad()
    def step(self):
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in self.params]
        new = self.step_fn([p.detach() for p in self.params], grads, self.state, self.lr)
        for p, value in zip(self.params, new):
            p.copy_(value)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
