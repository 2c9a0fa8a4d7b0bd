"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import GradientError, Tensor


class AdamW:
    """Standard AdamW; deterministic given identical gradients and state.

    update: m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2
            p -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p)
    """

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 2e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise GradientError("adamw step on parameter with missing grad")
            if p.grad.shape != p.data.shape:
                raise GradientError(
                    f"grad shape {p.grad.shape} does not match param {p.data.shape}"
                )
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            upd = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            p.data = p.data - self.lr * upd
