"""Adam optimizer with bias correction (Kingma & Ba defaults)."""

from __future__ import annotations

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a non-finite gradient signals a diverging training run."""


class Adam:
    """Updates named parameter arrays in place.

    Each parameter keeps its own first/second moment estimates; a single
    step counter advances per step() call, so stepping two parameter groups
    together is identical to stepping them with separate optimizers.
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]):
        self.step_count += 1
        t = self.step_count
        for name, param in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
