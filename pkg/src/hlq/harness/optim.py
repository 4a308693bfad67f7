"""Optimizers and learning-rate schedules for the training loop."""
from __future__ import annotations

import numpy as np

from ..errors import ParameterError


class SGD:
    """SGD with classical momentum and decoupled weight decay."""

    def __init__(self, params, lr: float = 0.05, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in self.params]

    def step(self, grads, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for p, g, v in zip(self.params, grads, self.velocity):
            if self.weight_decay and p.ndim > 1:
                g = g + self.weight_decay * p
            v *= self.momentum
            v += g
            p -= (lr * v).astype(p.dtype)


class AdamW:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            if self.weight_decay and p.ndim > 1:
                p -= (lr * self.weight_decay * p).astype(p.dtype)
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def scheduled_lr(base_lr: float, epoch: int, total_epochs: int, kind: str = "step",
                 milestones=(0.3, 0.6, 0.8), gamma: float = 0.1) -> float:
    """Step decay at fractional milestones, cosine annealing, or constant."""
    if kind == "none":
        return base_lr
    if kind == "step":
        drops = sum(1 for m in milestones if epoch >= m * total_epochs)
        return base_lr * (gamma ** drops)
    if kind == "cosine":
        return base_lr * 0.5 * (1 + float(np.cos(np.pi * epoch / max(total_epochs, 1))))
    raise ParameterError(f"unknown schedule {kind!r}")


def build_optimizer(kind: str, params, lr: float, momentum: float = 0.9,
                    betas=(0.9, 0.999), weight_decay: float = 0.0):
    if kind == "sgd":
        return SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamW(params, lr=lr, betas=betas, weight_decay=weight_decay)
    raise ParameterError(f"unknown optimizer {kind!r}")
