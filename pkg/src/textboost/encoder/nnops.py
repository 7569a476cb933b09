"""Shared neural-net primitives (float64 throughout)."""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
PROB_FLOOR = 1e-12  # clamp before log to avoid -inf on confident mistakes

# tanh-form GELU constants
_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


class DivergenceError(RuntimeError):
    """Non-finite activation or loss; carries where it was detected."""

    def __init__(self, where: str):
        super().__init__(f"non-finite values detected in {where}")
        self.where = where


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    u = _GELU_C0 * (x + _GELU_C1 * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C0 * (x + _GELU_C1 * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x**2)


def ln_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """LayerNorm over the last axis. Returns (y, cache)."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_sigma
    return gamma * xhat + beta, (xhat, inv_sigma)


def ln_backward(dy: np.ndarray, cache, gamma: np.ndarray):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv_sigma = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv_sigma
    return dx, dgamma, dbeta


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng):
    """Inverted dropout. Returns (y, mask); mask is None when inactive."""
    if not train or rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask) -> np.ndarray:
    return dy if mask is None else dy * mask
