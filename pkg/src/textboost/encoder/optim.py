"""Adam optimizer over flat parameter vectors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Standard Adam with bias correction.

    ``eps`` defaults to 1e-12 rather than the usual 1e-8: boosting weights
    start at 1/n without renormalization, so gradients arrive scaled down by
    up to ~n and the eps floor must sit well below their RMS for the update
    magnitude to stay scale-invariant.
    """

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-12):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
