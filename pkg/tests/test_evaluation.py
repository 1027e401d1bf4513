import numpy as np
import pytest
from hypothesis import given, strategies as st

from remse.data import SynthConfig, generate_synthetic, normalize_semantics
from remse.evaluation import (
    GZSLScorer,
    MetricsReport,
    ausuc,
    classify,
    classify_batch,
    curve_area,
    evaluate,
    harmonic_mean,
    per_class_accuracy,
)
from remse.losses import DegeneratePredictionError, predict
from remse.numerics import make_rng
from remse.trainer import TrainConfig, train

from oracles import brute_ausuc


@pytest.fixture(scope="module")
def noisy_run():
    cfg = SynthConfig(classes=5, seen=3, ds=4, dv=6, n_per_class=20, noise=0.6, gamma=0.5)
    d = generate_synthetic(cfg, make_rng(5))
    model, _ = train(d, TrainConfig(loss="sce+nmse", epochs=20, lr=0.05, seed=5))
    return d, model.W


def test_classify_self_match():
    T = normalize_semantics(make_rng(0).uniform(0.1, 1, (4, 3)))
    for c in range(4):
        assert classify(T[c] * 3.0, T) == c


def test_classify_tie_goes_to_lower_index():
    T = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert classify([1.0, 1.0], T) == 0
    assert classify([1.0, 1.0], T, candidate_ids=[7, 9]) == 7


def test_classify_bias_saturation():
    T = normalize_semantics(make_rng(1).uniform(0.1, 1, (5, 3)))
    seen = np.array([True, True, False, True, False])
    for p in make_rng(2).standard_normal((20, 3)):
        assert not seen[classify(p, T, seen_mask=seen, bias=np.inf)]
        assert not seen[classify(p, T, seen_mask=seen, bias=1e6)]
        assert seen[classify(p, T, seen_mask=seen, bias=-np.inf)]


def test_classify_zero_prediction():
    with pytest.raises(DegeneratePredictionError):
        classify([0.0, 0.0], np.eye(2))


def test_classify_scale_invariant():
    rng = make_rng(3)
    T = normalize_semantics(rng.uniform(0.1, 1, (6, 4)))
    P = rng.standard_normal((50, 4))
    c = rng.uniform(1e-3, 1e3, size=(50, 1))
    assert np.array_equal(classify_batch(P, T), classify_batch(c * P, T))


def test_per_class_accuracy():
    assert per_class_accuracy([0, 1, 2], [0, 1, 2], [0, 1, 2]) == 1.0
    labels = [0] * 10 + [1]
    preds = [0] * 10 + [0]
    assert per_class_accuracy(preds, labels, [0, 1]) == 0.5
    with pytest.raises(ValueError):
        per_class_accuracy([0], [0], [0, 1])


def test_harmonic_mean():
    assert harmonic_mean(0.5, 0.5) == 0.5
    assert harmonic_mean(0.4, 0.6) == pytest.approx(0.48, abs=1e-15)
    assert harmonic_mean(0.0, 0.0) == 0.0
    # published accuracy pair 64.8 / 77.1 with reported H 70.4
    assert round(harmonic_mean(0.648, 0.771), 3) == 0.704


@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_mean_bounds(u, s):
    h = harmonic_mean(u, s)
    assert h <= (u + s) / 2 + 1e-15
    assert h <= 2 * min(u, s) + 1e-15


def test_curve_area_degenerate():
    assert curve_area([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.5, abs=1e-12)


def test_curve_area_rectangle():
    assert curve_area([0.0, 0.8, 0.8], [0.6, 0.6, 0.0]) == pytest.approx(0.48, abs=1e-12)
    assert curve_area([0.8], [0.6]) == pytest.approx(0.48, abs=1e-12)


def test_ausuc_matches_dense_sweep(noisy_run):
    d, W = noisy_run
    area, curve = ausuc(W, d)
    scorer = GZSLScorer(W, d)
    gaps = scorer.gaps()
    n = 10 * scorer.default_grid().size
    dense = np.linspace(gaps.min() - 0.01, gaps.max() + 0.01, n)
    oracle = brute_ausuc(W, d, dense)
    assert 0.0 < area < 1.0
    assert abs(area - oracle) < 1e-3


def test_ausuc_endpoints(noisy_run):
    d, W = noisy_run
    scorer = GZSLScorer(W, d)
    S_lo, U_lo = scorer.accuracies(-np.inf)
    S_hi, U_hi = scorer.accuracies(np.inf)
    assert U_lo == 0.0 and S_hi == 0.0
    _, curve = ausuc(W, d)
    assert S_lo == curve[:, 0].max() and U_hi == curve[:, 1].max()


def test_ausuc_refinement_bound(noisy_run):
    d, W = noisy_run
    scorer = GZSLScorer(W, d)
    g = np.sort(scorer.gaps())
    coarse = np.linspace(g[0] - 0.01, g[-1] + 0.01, 15)
    fine = np.linspace(g[0] - 0.01, g[-1] + 0.01, 29)
    a1, c1 = ausuc(W, d, coarse)
    a2, _ = ausuc(W, d, fine)
    order = np.argsort(c1[:, 0])
    widths = np.diff(c1[order, 0])
    assert abs(a1 - a2) <= widths.max() * c1[:, 1].max() + 1e-12


def test_ausuc_perfect_classifier_is_rectangle():
    d = generate_synthetic(SynthConfig(classes=8, seen=6, ds=3, dv=6, n_per_class=6, noise=0.0, gamma=0.0),
                           make_rng(1))
    model, _ = train(d, TrainConfig(loss="nmse", epochs=800, lr=1.0, seed=1))
    area, curve = ausuc(model.W, d)
    assert curve[:, 0].max() == 1.0 and curve[:, 1].max() == 1.0
    assert area == pytest.approx(1.0)


def test_evaluate_report(noisy_run):
    d, W = noisy_run
    report, _ = evaluate(W, d)
    assert isinstance(report, MetricsReport)
    for v in (report.T1, report.U, report.S, report.AUSUC):
        assert 0.0 <= v <= 1.0
    assert report.H == pytest.approx(harmonic_mean(report.U, report.S))
    header, row = report.to_csv().splitlines()
    assert header.split(",") == ["T1", "U", "S", "H", "AUSUC", "PCC", "error_mean", "error_std"]
