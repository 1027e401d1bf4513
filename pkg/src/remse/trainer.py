"""Mini-batch gradient descent for the linear semantic predictor, plus two
small executable demonstrations of the loss's convergence behaviour."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .data import Dataset, normalize_semantics
from .numerics import DTYPE, make_rng
from .rebalance import (
    DEFAULT_EPS,
    ErrorMatrix,
    UndefinedCorrelationError,
    accumulate,
    compute_factors,
    ema_update,
    matrix_stats,
    pearson_correlation,
)

log = logging.getLogger(__name__)


class TrainingDiverged(ArithmeticError):
    pass


class StepSizeError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: str = "sce+remse"
    tau: float = 20.0
    lam: float = 1.0
    sigma: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    eps: float = DEFAULT_EPS
    mu: float | None = None  # EMA smoothing of the error matrix; None = batch-local
    lr: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    seed: int = 7
    init_scale: float = 1.0

    def __post_init__(self):
        if self.loss not in L.LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {', '.join(L.LOSS_NAMES)}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        if self.alpha < 0 or self.beta < 0 or not self.eps > 0:
            raise ValueError("need alpha >= 0, beta >= 0, eps > 0")
        if self.mu is not None and not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        self.loss_config()

    def loss_config(self) -> L.LossConfig:
        return L.LossConfig(self.tau, self.lam, self.sigma)


@dataclass
class LinearEmbedding:
    W: np.ndarray

    def predict(self, features) -> np.ndarray:
        return L.predict(self.W, features)

    def to_json(self, config: TrainConfig | None = None) -> str:
        ds, dv = self.W.shape
        doc = {
            "d_s": ds,
            "d_v": dv,
            "W": [float(x) for x in self.W.ravel()],
            "config": asdict(config) if config is not None else None,
        }
        return json.dumps(doc, indent=1) + "\n"

    def save(self, path, config: TrainConfig | None = None) -> None:
        Path(path).write_text(self.to_json(config), encoding="utf-8")

    @classmethod
    def load(cls, path) -> tuple["LinearEmbedding", TrainConfig | None]:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        W = np.asarray(doc["W"], dtype=DTYPE).reshape(doc["d_s"], doc["d_v"])
        cfg = TrainConfig(**doc["config"]) if doc.get("config") else None
        return cls(W), cfg


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    error_mean: float
    error_std: float
    pcc: float
    grad_norm: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        cols = ["epoch", "loss", "error_mean", "error_std", "pcc", "grad_norm"]
        lines = [",".join(cols)]
        for r in self.records:
            lines.append(",".join(repr(getattr(r, c)) for c in cols))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_batch(data: Dataset, idx: np.ndarray, semantics=None, normalized=None) -> L.Batch:
    if normalized is None:
        semantics = data.table.masked
        normalized = normalize_semantics(data.table)
    return L.Batch(data.store.features[idx], data.store.labels[idx], semantics, normalized)


def error_matrix(W, data: Dataset, split: str, scope: str = "evaluation") -> ErrorMatrix:
    feats, labels = data.split(split)
    T = normalize_semantics(data.table)
    batch = L.Batch(feats, labels, data.table.masked, T)
    return accumulate(L.batch_errors(W, batch), data.table.class_count, data.table.mask, scope)


def diagnostics(W, data: Dataset, split: str) -> dict:
    """Mean/std of the class-averaged error matrix and its PCC with label values."""
    M = error_matrix(W, data, split)
    mean, std = matrix_stats(M)
    try:
        pcc = pearson_correlation(M, normalize_semantics(data.table))
    except UndefinedCorrelationError:
        pcc = float("nan")
    return {"split": split, "error_mean": mean, "error_std": std, "pcc": pcc, "matrix": M}


def _factors_for(loss: str, M: ErrorMatrix, cfg: TrainConfig):
    if "remse" not in loss:
        return None
    return compute_factors(M, cfg.alpha, cfg.beta, cfg.eps)


def init_weights(ds: int, dv: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(ds, dv)) * (scale / np.sqrt(dv))


def train(data: Dataset, cfg: TrainConfig, W0: np.ndarray | None = None) -> tuple[LinearEmbedding, TrainTrace]:
    """Plain SGD; reweighting factors are rebuilt from every mini-batch."""
    rng = make_rng(cfg.seed)
    lcfg = cfg.loss_config()
    C, ds = data.table.class_count, data.table.semantic_dim
    dv = data.store.feature_dim
    mask = data.table.mask
    semantics = data.table.masked
    normalized = normalize_semantics(data.table)
    seen = np.asarray(data.manifest.seen_class_ids, dtype=np.int64)
    train_idx = data.store.indices("train")
    if train_idx.size == 0:
        raise ValueError("training split is empty")

    W = init_weights(ds, dv, cfg.init_scale, rng) if W0 is None else np.array(W0, dtype=DTYPE)
    running: ErrorMatrix | None = None
    trace = TrainTrace()
    full = make_batch(data, train_idx, semantics, normalized)
    step = 0
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        for start in range(0, order.size, cfg.batch_size):
            batch = make_batch(data, order[start : start + cfg.batch_size], semantics, normalized)
            factors = None
            if "remse" in cfg.loss:
                M = accumulate(L.batch_errors(W, batch), C, mask)
                if cfg.mu is not None:
                    running = M if running is None else ema_update(running, M, cfg.mu)
                    M = running
                factors = _factors_for(cfg.loss, M, cfg)
            value, grad = L.objective(W, batch, cfg.loss, lcfg, seen, factors)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            W = W - cfg.lr * grad
            step += 1

        Mfull = accumulate(L.batch_errors(W, full), C, mask, "evaluation")
        value, grad = L.objective(W, full, cfg.loss, lcfg, seen, _factors_for(cfg.loss, Mfull, cfg))
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at end of epoch {epoch}, step {step}")
        mean, std = matrix_stats(Mfull)
        try:
            pcc = pearson_correlation(Mfull, normalized)
        except UndefinedCorrelationError:
            pcc = float("nan")
        trace.records.append(EpochRecord(epoch, value, mean, std, pcc, float(np.linalg.norm(grad))))
        log.debug("epoch %d loss %.6g std %.4g pcc %.3f", epoch, value, std, pcc)
    return LinearEmbedding(W), trace


def one_dim_factors(ex: float, ey: float, alpha: float, eps: float = DEFAULT_EPS) -> tuple[float, float]:
    """Weights for the two-sample, one-semantic case.

    Scalar form of :func:`compute_factors` on the 2x1 matrix [[ex], [ey]]; the
    semantic-level factor is identically 1 with a single semantic.
    """
    mx, my = max(ex, eps), max(ey, eps)
    if alpha == 0:
        return 1.0, 1.0
    lo = min(mx, my)
    return (np.log(mx / lo) + 1.0) ** alpha, (np.log(my / lo) + 1.0) ** alpha


def demo_theorem_b(x0: float = 1.0, y0: float = 2.0, x: float = 0.0, y: float = 0.0, r: float = 0.01,
                   alpha: float = 1.0, steps: int = 2000, eps: float = DEFAULT_EPS,
                   stop_below: float | None = None) -> np.ndarray:
    """Two 1-D predictions descending a reweighted squared loss.

    Returns an array of shape (steps + 1, 4) with columns e_x, e_y, w, v, where
    row t holds the errors before step t and the weights used for that step.
    With ``stop_below`` the run ends early once both errors drop under it.
    """
    if r <= 0 or alpha < 0:
        raise ValueError("need r > 0 and alpha >= 0")
    xt, yt = float(x0), float(y0)
    out = np.empty((steps + 1, 4), dtype=DTYPE)
    for t in range(steps + 1):
        ex, ey = (xt - x) ** 2, (yt - y) ** 2
        w, v = one_dim_factors(ex, ey, alpha, eps)
        out[t] = ex, ey, w, v
        if t == steps:
            break
        if stop_below is not None and ex < stop_below and ey < stop_below:
            return out[: t + 1]
        for weight in (w, v):
            if not (1.0 - 2.0 * r * weight) ** 2 < 1.0:
                raise StepSizeError(f"step {t}: (1 - 2 r w)^2 >= 1 with r={r}, weight={weight}")
        xt = xt - 2.0 * r * w * (xt - x)
        yt = yt - 2.0 * r * v * (yt - y)
    return out


PROP_A_FEATURES = np.array([[1.0], [1.0]])
PROP_A_TARGETS = np.array([[1.0, 0.0], [0.0, 1.0]])


def demo_proposition_a(features=None, targets=None, lr: float = 0.1, tol: float = 1e-8,
                       max_steps: int = 100_000) -> dict:
    """Fit a linear map with plain MSE until the gradient vanishes and compare
    each prediction norm against |s| cos(theta)."""
    X = PROP_A_FEATURES if features is None else np.asarray(features, dtype=DTYPE)
    S = PROP_A_TARGETS if targets is None else np.asarray(targets, dtype=DTYPE)
    batch = L.Batch(X, np.arange(X.shape[0]), S, S)
    W = np.zeros((S.shape[1], X.shape[1]))
    for step in range(max_steps):
        g = L.mse_grad(W, batch)
        if np.linalg.norm(g) < tol:
            break
        W = W - lr * g
    else:
        raise ConvergenceError(f"gradient norm still {np.linalg.norm(g):.3g} after {max_steps} steps")
    P = L.predict(W, X)
    pred_norm = np.linalg.norm(P, axis=1)
    label_norm = np.linalg.norm(S, axis=1)
    cos = np.einsum("ij,ij->i", P, S) / np.maximum(pred_norm * label_norm, 1e-300)
    projected = label_norm * cos
    return {
        "W": W,
        "steps": step,
        "grad_norm": float(np.linalg.norm(g)),
        "pred_norm": pred_norm,
        "projected_norm": projected,
        "cos": cos,
        "gap": np.abs(pred_norm - projected),
    }
