"""Loss kernels for a linear semantic predictor and their gradients w.r.t. W.

Every ``*_grad`` returns a matrix with the shape of ``W`` (d_s x d_v). Batch
means are taken over instances. Reweighting factors are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, ShapeError, as_matrix, row_norms


class DegeneratePredictionError(ArithmeticError):
    """A prediction or label vector has zero norm, so its direction is undefined."""


class LabelError(ValueError):
    pass


LOSS_NAMES = ("sce", "sce+nmse", "sce+remse", "sce+balmse", "nmse", "remse")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 20.0
    lam: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class Batch:
    """Instances plus the class semantic table they are scored against.

    ``semantics`` is the masked raw table (C x d_s); ``normalized`` its
    row-normalized form.
    """

    features: np.ndarray
    labels: np.ndarray
    semantics: np.ndarray
    normalized: np.ndarray

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return self.normalized[self.labels]

    @property
    def raw_targets(self) -> np.ndarray:
        return self.semantics[self.labels]


@dataclass
class BatchErrors:
    """Squared normalized residuals e_ij, one row per instance."""

    residuals: np.ndarray
    labels: np.ndarray


def predict(W, features) -> np.ndarray:
    W = as_matrix(W, "W")
    X = as_matrix(features, "features")
    if W.shape[1] != X.shape[1]:
        raise ShapeError(f"W is {W.shape[0]}x{W.shape[1]} but features have {X.shape[1]} columns")
    return X @ W.T


def _normalize_rows(P: np.ndarray, what: str = "prediction") -> tuple[np.ndarray, np.ndarray]:
    n = row_norms(P)
    if np.any(n == 0):
        raise DegeneratePredictionError(f"zero-norm {what} vector at row {int(np.flatnonzero(n == 0)[0])}")
    return P / n[:, None], n


def _backprop_normalized(G: np.ndarray, T: np.ndarray, norms: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Chain dL/dt~ through t~ = s~/|s~| and s~ = W v into dL/dW."""
    dS = (G - T * np.einsum("ij,ij->i", T, G)[:, None]) / norms[:, None]
    return dS.T @ X


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1)
    return m + np.log(np.exp(z - m[..., None]).sum(axis=-1))


def class_probabilities(s_pred, T_seen, tau: float) -> np.ndarray:
    s_pred = np.asarray(s_pred, dtype=DTYPE)
    n = float(np.sqrt(s_pred @ s_pred))
    if n == 0:
        raise DegeneratePredictionError("zero prediction vector")
    return _softmax(tau * (np.asarray(T_seen, dtype=DTYPE) @ (s_pred / n)))


def _seen_positions(labels: np.ndarray, seen_ids) -> np.ndarray:
    seen_ids = np.asarray(seen_ids, dtype=np.int64)
    lookup = {int(c): k for k, c in enumerate(seen_ids)}
    try:
        return np.array([lookup[int(y)] for y in labels], dtype=np.int64)
    except KeyError as e:
        raise LabelError(f"label {e.args[0]} is not a seen class") from None


def _sce(W, batch: Batch, seen_ids, tau: float, need_grad: bool):
    X = batch.features
    N = batch.size
    pos = _seen_positions(batch.labels, seen_ids)
    Tc = batch.normalized[np.asarray(seen_ids, dtype=np.int64)]
    T, norms = _normalize_rows(predict(W, X))
    logits = tau * (T @ Tc.T)
    loss = float(np.sum(_logsumexp(logits) - logits[np.arange(N), pos]) / N)
    if not need_grad:
        return loss, None
    P = _softmax(logits)
    P[np.arange(N), pos] -= 1.0
    G = tau * (P @ Tc) / N
    return loss, _backprop_normalized(G, T, norms, X)


def sce_loss(W, batch: Batch, seen_ids, tau: float) -> float:
    return _sce(W, batch, seen_ids, tau, False)[0]


def sce_grad(W, batch: Batch, seen_ids, tau: float) -> np.ndarray:
    return _sce(W, batch, seen_ids, tau, True)[1]


def mse_loss(W, batch: Batch) -> float:
    R = predict(W, batch.features) - batch.raw_targets
    return float(np.sum(R * R) / batch.size)


def mse_grad(W, batch: Batch) -> np.ndarray:
    R = predict(W, batch.features) - batch.raw_targets
    return 2.0 * (R.T @ batch.features) / batch.size


def batch_errors(W, batch: Batch) -> BatchErrors:
    T, _ = _normalize_rows(predict(W, batch.features))
    D = T - batch.targets
    return BatchErrors(D * D, batch.labels)


def _instance_weights(factors, labels: np.ndarray) -> np.ndarray:
    pq = factors.p * factors.q
    if labels.size and labels.max() >= pq.shape[0]:
        raise LabelError(f"no factor row for label {int(labels.max())}")
    return pq[labels]


def _weighted_nmse(W, batch: Batch, weights: np.ndarray | None, need_grad: bool):
    X = batch.features
    T, norms = _normalize_rows(predict(W, X))
    D = T - batch.targets
    E = D * D
    if weights is None:
        weights = np.ones_like(E)
    loss = float(np.sum(weights * E) / batch.size)
    if not need_grad:
        return loss, E, None
    G = 2.0 * weights * D / batch.size
    return loss, E, _backprop_normalized(G, T, norms, X)


def nmse_loss(W, batch: Batch) -> tuple[float, BatchErrors]:
    loss, E, _ = _weighted_nmse(W, batch, None, False)
    return loss, BatchErrors(E, batch.labels)


def nmse_grad(W, batch: Batch) -> np.ndarray:
    return _weighted_nmse(W, batch, None, True)[2]


def remse_loss(errors: BatchErrors, factors) -> float:
    """Batch mean of sum_j p[y_i, j] * q[y_i, j] * e_ij."""
    w = _instance_weights(factors, errors.labels)
    return float(np.sum(w * errors.residuals) / errors.residuals.shape[0])


def remse_grad(W, batch: Batch, factors) -> np.ndarray:
    return _weighted_nmse(W, batch, _instance_weights(factors, batch.labels), True)[2]


def _balanced_mse(W, batch: Batch, sigma: float, need_grad: bool):
    # the label bank holds each distinct class label in the batch once
    if batch.size == 0:
        raise ValueError("balanced MSE needs a non-empty batch")
    X = batch.features
    classes, pos = np.unique(batch.labels, return_inverse=True)
    bank = batch.normalized[classes]
    T, norms = _normalize_rows(predict(W, X))
    diff = T[:, None, :] - bank[None, :, :]
    logits = -np.einsum("ijk,ijk->ij", diff, diff) / sigma
    N = batch.size
    loss = float(np.sum(_logsumexp(logits) - logits[np.arange(N), pos]) / N)
    if not need_grad:
        return loss, None
    P = _softmax(logits)
    G = (2.0 / sigma) * (P @ bank - bank[pos]) / N
    return loss, _backprop_normalized(G, T, norms, X)


def balanced_mse_loss(W, batch: Batch, sigma: float) -> float:
    return _balanced_mse(W, batch, sigma, False)[0]


def balanced_mse_grad(W, batch: Batch, sigma: float) -> np.ndarray:
    return _balanced_mse(W, batch, sigma, True)[1]


def objective(W, batch: Batch, loss: str, cfg: LossConfig, seen_ids, factors=None, need_grad: bool = True):
    """Evaluate a named training objective; returns (value, grad or None)."""
    if loss not in LOSS_NAMES:
        raise ValueError(f"unknown loss {loss!r}; choose from {', '.join(LOSS_NAMES)}")
    total = 0.0
    grad = np.zeros_like(as_matrix(W)) if need_grad else None
    head, _, tail = loss.partition("+")
    if head == "sce":
        aux, scale = tail, cfg.lam
        v, g = _sce(W, batch, seen_ids, cfg.tau, need_grad)
        total += v
        if need_grad:
            grad += g
    else:
        aux, scale = head, 1.0
    if aux in ("nmse", "remse"):
        weights = None
        if aux == "remse":
            if factors is None:
                raise ValueError("remse needs reweighting factors")
            weights = _instance_weights(factors, batch.labels)
        v, _, g = _weighted_nmse(W, batch, weights, need_grad)
    elif aux == "balmse":
        v, g = _balanced_mse(W, batch, cfg.sigma, need_grad)
    else:
        return total, grad
    total += scale * v
    if need_grad:
        grad += scale * g
    return total, grad


def combined_loss(W, batch: Batch, cfg: LossConfig, seen_ids, factors) -> float:
    """SCE plus lambda times ReMSE."""
    return objective(W, batch, "sce+remse", cfg, seen_ids, factors, need_grad=False)[0]


def combined_grad(W, batch: Batch, cfg: LossConfig, seen_ids, factors) -> np.ndarray:
    return objective(W, batch, "sce+remse", cfg, seen_ids, factors)[1]
