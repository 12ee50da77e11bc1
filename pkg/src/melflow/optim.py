"""ADAM with decoupled weight decay, plus plateau-driven LR annealing."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Standard ADAM (bias-corrected) with decoupled weight decay.

    Parameters are a name -> Tensor mapping; moment accumulators are kept per
    parameter with matching shapes.  Non-finite gradients abort the step with
    the offending parameter's name.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-6,
    ):
        if lr <= 0:
            raise ValueError(f"Adam: learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


class PlateauAnnealer:
    """Halve the LR after ``patience`` epochs without validation improvement."""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 10,
                 floor: float = 1e-6, min_delta: float = 1e-4):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.floor = floor
        self.min_delta = min_delta
        self.best = np.inf
        self.stale = 0

    def update(self, val_metric: float) -> bool:
        """Record one epoch's validation metric; returns True if LR annealed."""
        if val_metric < self.best - self.min_delta:
            self.best = val_metric
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            new_lr = max(self.optimizer.lr * self.factor, self.floor)
            annealed = new_lr < self.optimizer.lr
            self.optimizer.lr = new_lr
            return annealed
        return False
