"""ADAM with bias-corrected moments."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class Adam:
    """Adaptive moment estimation over a fixed list of parameters.

    Parameters with ``requires_grad=False`` (frozen) are skipped entirely, so
    their values never change.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        live = [k for k, p in enumerate(self.params) if p.requires_grad]
        if live and all(self.params[k].grad is None for k in live):
            raise MissingGradientError("adam step called before backward()")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in live:
            p = self.params[k]
            g = p.grad
            if g is None:
                # parameter not on this step's graph
                continue
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / c1
            v_hat = self.v[k] / c2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
