"""Class-averaged semantic error matrix, reweighting factors and imbalance
diagnostics (Pearson correlation, mean/std, heatmap export)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import BatchErrors
from .numerics import DTYPE

DEFAULT_EPS = 1e-12


class UndefinedCorrelationError(ArithmeticError):
    pass


@dataclass
class ErrorMatrix:
    """Per-(class, semantic) mean residual with the number of contributing samples.

    Cells with ``counts == 0`` are absent; their ``values`` entry is NaN so an
    accidental read cannot pass for a real zero.
    """

    values: np.ndarray
    counts: np.ndarray
    scope: str = "batch"

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def accumulate(errors: BatchErrors, class_count: int, mask: np.ndarray | None = None,
               scope: str = "batch") -> ErrorMatrix:
    """Average residuals per class. ``mask`` (C x d_s, True = missing) drops cells."""
    E = np.asarray(errors.residuals, dtype=DTYPE)
    labels = np.asarray(errors.labels, dtype=np.int64)
    ds = E.shape[1] if E.ndim == 2 else 0
    sums = np.zeros((class_count, ds), dtype=DTYPE)
    n = np.zeros(class_count, dtype=np.int64)
    # unbuffered add keeps a fixed, instance-order accumulation
    np.add.at(sums, labels, E)
    np.add.at(n, labels, 1)
    counts = np.repeat(n[:, None], ds, axis=1)
    if mask is not None:
        counts = np.where(mask, 0, counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(n, 1)[:, None], np.nan)
    return ErrorMatrix(values, counts, scope)


@dataclass
class ReweightFactors:
    p: np.ndarray  # min taken across classes, per semantic column
    q: np.ndarray  # min taken across semantics, per class row
    alpha: float
    beta: float
    eps: float


def _log_ratio_factor(m: np.ndarray, present: np.ndarray, axis: int, power: float) -> np.ndarray:
    out = np.ones_like(m)
    if power == 0:
        return out
    masked = np.where(present, m, np.inf)
    mins = masked.min(axis=axis, keepdims=True)
    ok = present & np.isfinite(mins)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = (np.log(m / mins) + 1.0) ** power
    out[ok] = f[ok]
    return out


def compute_factors(M: ErrorMatrix, alpha: float = 1.0, beta: float = 1.0,
                    eps: float = DEFAULT_EPS) -> ReweightFactors:
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    if not eps > 0:
        raise ValueError("eps must be positive")
    present = M.present
    m = np.where(present, np.maximum(np.nan_to_num(M.values, nan=0.0), eps), np.nan)
    p = _log_ratio_factor(m, present, axis=0, power=alpha)
    q = _log_ratio_factor(m, present, axis=1, power=beta)
    return ReweightFactors(p, q, float(alpha), float(beta), float(eps))


def ema_update(running: ErrorMatrix, batch: ErrorMatrix, mu: float) -> ErrorMatrix:
    if running.shape != batch.shape:
        raise ValueError(f"shape mismatch {running.shape} vs {batch.shape}")
    if not 0 <= mu < 1:
        raise ValueError("mu must lie in [0, 1)")
    a, b = running.present, batch.present
    values = np.full(running.shape, np.nan)
    both = a & b
    values[both] = mu * running.values[both] + (1 - mu) * batch.values[both]
    values[a & ~b] = running.values[a & ~b]
    values[b & ~a] = batch.values[b & ~a]
    return ErrorMatrix(values, running.counts + batch.counts, batch.scope)


def pearson_correlation(M: ErrorMatrix, T: np.ndarray) -> float:
    """PCC between label values t_lj and errors m_lj over present cells."""
    present = M.present
    x = np.asarray(T, dtype=DTYPE)[present]
    y = M.values[present]
    if x.size < 2:
        raise UndefinedCorrelationError("need at least two present cells")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("constant series")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def matrix_stats(M: ErrorMatrix) -> tuple[float, float]:
    """Population mean and standard deviation over present cells."""
    v = M.values[M.present]
    if v.size == 0:
        raise ValueError("error matrix has no present cells")
    # shifting by the first cell keeps constant matrices exact
    shift = v[0]
    mean = float(shift + np.mean(v - shift))
    return mean, float(np.sqrt(np.mean((v - mean) ** 2)))


def _color(u: float) -> str:
    # light gray (u=0) to pure red (u=1)
    r = round(200 + 55 * u)
    gb = round(200 * (1 - u))
    return f"#{r:02x}{gb:02x}{gb:02x}"


def export_heatmap(M: ErrorMatrix, path, names: list[str] | None = None,
                   eps: float = DEFAULT_EPS, cell: int = 12) -> tuple[Path, Path]:
    """Write ``<path>.csv`` with log(m + eps) and ``<path>.svg`` with one rect per cell."""
    C, ds = M.shape
    if C == 0 or ds == 0:
        raise ValueError("empty error matrix")
    names = names or [f"a{j}" for j in range(ds)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = path.with_suffix(".csv"), path.with_suffix(".svg")
    present = M.present
    logv = np.where(present, np.log(np.nan_to_num(M.values, nan=0.0) + eps), np.nan)

    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class_id", *names])
        for c in range(C):
            w.writerow([c, *(repr(float(x)) if ok else "" for x, ok in zip(logv[c], present[c]))])

    if present.any():
        lo, hi = float(np.nanmin(logv)), float(np.nanmax(logv))
    else:
        lo, hi = 0.0, 0.0
    span = hi - lo
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{ds * cell}" height="{C * cell}" '
        f'viewBox="0 0 {ds * cell} {C * cell}">'
    ]
    for c in range(C):
        for j in range(ds):
            if present[c, j]:
                u = (logv[c, j] - lo) / span if span > 0 else 0.0
                fill = _color(u)
            else:
                fill = "none"
            lines.append(
                f'<rect x="{j * cell}" y="{c * cell}" width="{cell}" height="{cell}" fill="{fill}" '
                f'data-class="{c}" data-semantic="{j}"/>'
            )
    lines.append("</svg>")
    svg_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return csv_path, svg_path


def read_heatmap_csv(path) -> tuple[list[str], np.ndarray]:
    """Inverse of the CSV half of :func:`export_heatmap`; absent cells come back as NaN."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    names = rows[0][1:]
    vals = np.array([[float(x) if x else np.nan for x in r[1:]] for r in rows[1:]], dtype=DTYPE)
    return names, vals
