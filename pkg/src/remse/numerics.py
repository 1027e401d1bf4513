"""Small dense-matrix helpers shared by the rest of the package.

Matrices are plain ``numpy.ndarray`` objects in float64. The random source
is numpy's PCG64 bit generator, which has a stable stream for a given seed.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a computation produced a non-finite value."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def l2_norm(v) -> float:
    v = np.asarray(v, dtype=DTYPE).ravel()
    return float(np.sqrt(np.dot(v, v)))


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def finite_difference_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value while perturbing entry {k}")
        g[k] = (fp - fm) / (2.0 * h)
    return grad


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator. Never swap the bit generator: fixtures depend on it."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
