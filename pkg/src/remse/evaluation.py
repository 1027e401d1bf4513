"""ZSL / GZSL classification by cosine similarity, per-class accuracies,
harmonic mean and the area under the seen-unseen accuracy curve."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, normalize_semantics
from .losses import DegeneratePredictionError, predict
from .numerics import DTYPE, row_norms


@dataclass
class MetricsReport:
    T1: float
    U: float
    S: float
    H: float
    AUSUC: float
    PCC: float
    error_mean: float
    error_std: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    def to_csv(self) -> str:
        d = asdict(self)
        return ",".join(d) + "\n" + ",".join(repr(float(v)) for v in d.values()) + "\n"


def cosine_scores(preds, T_candidates) -> np.ndarray:
    P = np.atleast_2d(np.asarray(preds, dtype=DTYPE))
    n = row_norms(P)
    if np.any(n == 0):
        raise DegeneratePredictionError("zero prediction vector")
    return (P / n[:, None]) @ np.asarray(T_candidates, dtype=DTYPE).T


def classify_batch(preds, T_candidates, candidate_ids=None, seen_mask=None, bias: float = 0.0) -> np.ndarray:
    """Best-matching class per row; ``bias`` is subtracted from seen-class scores.

    np.argmax returns the first maximum, so ties go to the lowest candidate
    position (candidates are passed in ascending id order).
    """
    T = np.atleast_2d(np.asarray(T_candidates, dtype=DTYPE))
    if T.shape[0] == 0:
        raise ValueError("empty candidate table")
    scores = cosine_scores(preds, T)
    if seen_mask is not None and bias != 0.0:
        seen_mask = np.asarray(seen_mask, dtype=bool)
        if np.isinf(bias):
            # avoid inf - inf; a saturated bias removes (or forces) seen classes outright
            if np.any(~seen_mask) or bias < 0:
                scores = np.where(seen_mask, -bias, scores)
        else:
            scores = scores - bias * seen_mask
    pos = np.argmax(scores, axis=1)
    if candidate_ids is None:
        return pos
    return np.asarray(candidate_ids)[pos]


def classify(pred, T_candidates, candidate_ids=None, seen_mask=None, bias: float = 0.0) -> int:
    return int(classify_batch(np.asarray(pred)[None, :], T_candidates, candidate_ids, seen_mask, bias)[0])


def per_class_accuracy(predictions, labels, class_set) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    accs = []
    for c in class_set:
        sel = labels == c
        if not np.any(sel):
            raise ValueError(f"class {c} has no instances")
        accs.append(np.mean(predictions[sel] == c))
    if not accs:
        raise ValueError("empty class set")
    return float(np.mean(accs))


def harmonic_mean(U: float, S: float) -> float:
    if U < 0 or S < 0:
        raise ValueError("accuracies must be non-negative")
    if U + S == 0:
        return 0.0
    return 2.0 * U * S / (U + S)


def curve_area(S, U) -> float:
    """Trapezoidal area under U(S), closed to both axes."""
    S = np.asarray(S, dtype=DTYPE)
    U = np.asarray(U, dtype=DTYPE)
    order = np.lexsort((-U, S))
    S, U = S[order], U[order]
    if S[0] > 0:
        S = np.concatenate([[0.0], S])
        U = np.concatenate([[U[0]], U])
    if U[-1] > 0:
        S = np.concatenate([S, [S[-1]]])
        U = np.concatenate([U, [0.0]])
    return float(np.sum(0.5 * (U[1:] + U[:-1]) * np.diff(S)))


class GZSLScorer:
    """Caches GZSL test scores so a bias sweep only re-runs the argmax."""

    def __init__(self, W, data: Dataset):
        T = normalize_semantics(data.table)
        self.seen_ids = np.asarray(data.manifest.seen_class_ids)
        self.unseen_ids = np.asarray(data.manifest.unseen_class_ids)
        self.all_ids = np.arange(data.table.class_count)
        self.seen_mask = data.seen_mask
        idx_s = data.store.indices("test_seen")
        idx_u = data.store.indices("test_unseen")
        if idx_s.size == 0 or idx_u.size == 0:
            raise ValueError("GZSL evaluation needs non-empty test_seen and test_unseen splits")
        self.idx = np.concatenate([idx_s, idx_u])
        self.n_seen = idx_s.size
        self.labels = data.store.labels[self.idx]
        self.scores = cosine_scores(predict(W, data.store.features[self.idx]), T)

    def predictions(self, bias: float) -> np.ndarray:
        s = self.scores
        if bias == np.inf:
            s = np.where(self.seen_mask, -np.inf, s)
        elif bias == -np.inf:
            s = np.where(self.seen_mask, s, -np.inf)
        elif bias != 0.0:
            s = s - bias * self.seen_mask
        return self.all_ids[np.argmax(s, axis=1)]

    def accuracies(self, bias: float) -> tuple[float, float]:
        pred = self.predictions(bias)
        S = per_class_accuracy(pred[: self.n_seen], self.labels[: self.n_seen], self.seen_ids)
        U = per_class_accuracy(pred[self.n_seen :], self.labels[self.n_seen :], self.unseen_ids)
        return S, U

    def gaps(self) -> np.ndarray:
        best_seen = self.scores[:, self.seen_mask].max(axis=1)
        best_unseen = self.scores[:, ~self.seen_mask].max(axis=1)
        return best_seen - best_unseen

    def default_grid(self) -> np.ndarray:
        g = np.unique(self.gaps())
        mids = 0.5 * (g[1:] + g[:-1])
        return np.concatenate([[-np.inf], g[:1] - 1.0, mids, g[-1:] + 1.0, [np.inf]])


def ausuc(W, data: Dataset, grid=None) -> tuple[float, np.ndarray]:
    """Area under the seen/unseen accuracy curve traced by calibrated stacking.

    Returns the area and the curve as an (n, 2) array of (S, U) points in grid
    order.
    """
    scorer = GZSLScorer(W, data)
    grid = scorer.default_grid() if grid is None else np.sort(np.asarray(grid, dtype=DTYPE))
    curve = np.array([scorer.accuracies(float(b)) for b in grid], dtype=DTYPE)
    return curve_area(curve[:, 0], curve[:, 1]), curve


def zsl_accuracy(W, data: Dataset) -> float:
    T = normalize_semantics(data.table)
    unseen = np.asarray(data.manifest.unseen_class_ids)
    feats, labels = data.split("test_unseen")
    pred = classify_batch(predict(W, feats), T[unseen], unseen)
    return per_class_accuracy(pred, labels, unseen)


def evaluate(W, data: Dataset, diag_split: str = "test") -> tuple[MetricsReport, np.ndarray]:
    from .trainer import diagnostics

    scorer = GZSLScorer(W, data)
    S, U = scorer.accuracies(0.0)
    area, curve = ausuc(W, data)
    d = diagnostics(W, data, diag_split)
    report = MetricsReport(
        T1=zsl_accuracy(W, data),
        U=U,
        S=S,
        H=harmonic_mean(U, S),
        AUSUC=area,
        PCC=d["pcc"],
        error_mean=d["error_mean"],
        error_std=d["error_std"],
    )
    return report, curve


def write_curve(curve: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["S", "U"])
        for s, u in curve:
            w.writerow([repr(float(s)), repr(float(u))])


def write_report(report: MetricsReport, outdir) -> None:
    outdir = Path(outdir)
    (outdir / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    (outdir / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
