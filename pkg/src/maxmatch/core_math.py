"""Dense float64 kernels shared by every other module.

All exp-family routines shift by the maximum before exponentiating, and every
log or KL evaluation clamps probabilities to ``PROB_FLOOR`` and renormalizes.
"""
from __future__ import annotations

import math

import numpy as np

PROB_FLOOR = 1e-12


class DimensionError(ValueError):
    """Raised when two operands have incompatible lengths or shapes."""


def _vec(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"expected a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def dot(a, b) -> float:
    a, b = _vec(a), _vec(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return float(a @ b)


def logsumexp(z) -> float:
    z = _vec(z)
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


def softmax(z) -> np.ndarray:
    z = _vec(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(z) -> np.ndarray:
    z = _vec(z)
    return z - logsumexp(z)


def softplus(t: float) -> float:
    # log(1 + e^t) without overflow for large t
    if t > 0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


def sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def log_sigmoid(t: float) -> float:
    return -softplus(-t)


def clamp_prob(p) -> np.ndarray:
    """Clamp to the probability floor and renormalize onto the simplex."""
    p = np.maximum(_vec(p), PROB_FLOOR)
    return p / p.sum()


def neg_kl(p, q) -> float:
    """Return ``-KL(p || q)``; always ``<= 0`` up to rounding."""
    p, q = _vec(p), _vec(q)
    if p.shape != q.shape:
        raise DimensionError(f"length mismatch: {p.size} vs {q.size}")
    p, q = clamp_prob(p), clamp_prob(q)
    return float(-(p * (np.log(p) - np.log(q))).sum())
