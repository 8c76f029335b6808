"""
Gradient-based optimizers
File: app/core/optim.py
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from app.core.tensor import Tensor


class Optimizer:
    """Owns a list of parameters and updates them in place from ``.grad``"""

    def __init__(self, params: Iterable[Tensor], lr: float):
        self.params: list[Tensor] = [p for p in params if p.requires_grad]
        if lr < 0:
            raise ValueError(f"learning rate must be nonnegative, got {lr}")
        self.lr = float(lr)
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):

    def step(self) -> None:
        self.step_count += 1
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam(Optimizer):
    """Adaptive moment estimation; moment buffers mirror parameter shapes"""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            if self.lr == 0.0:
                continue
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(name: str, params: Iterable[Tensor], lr: float) -> Optimizer:
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer '{name}'")
