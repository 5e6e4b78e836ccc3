import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxwent import network as nn
from maxwent.evaluation import (
    PredictionSample,
    amplitude_diagnostic,
    auroc,
    evaluate,
    fpr_at_95_tpr,
    predict_samples,
    scores_csv,
    test_nll,
    uncertainty,
    uncertainty_classification,
    uncertainty_regression,
)
from maxwent.network import NetworkSpec, WeightLayout
from maxwent.numerics import ContractError, RandomStream
from maxwent.stochastic import EnsembleDistribution, make_distribution


def _binary(p):
    p = np.asarray(p, dtype=float)[:, None, None]
    return PredictionSample("classification", np.concatenate([1 - p, p], axis=2))


def _gauss(mu, sigma):
    return PredictionSample("regression", np.stack([np.asarray(mu, float), np.asarray(sigma, float)], axis=-1)[:, None, :])


def test_classification_uncertainty_cases():
    assert uncertainty_classification(_binary([0.5, 0.5]))[0] == pytest.approx(math.log(2))
    assert uncertainty_classification(_binary([1.0, 1.0]))[0] == 0.0
    # entropy of the mean, not mean entropy
    assert uncertainty_classification(_binary([0.0, 1.0]))[0] == pytest.approx(math.log(2))


def test_regression_uncertainty_cases():
    assert uncertainty_regression(_gauss([0.3], [0.7]))[0] == pytest.approx(0.49)
    assert uncertainty_regression(_gauss([-1.0, 1.0], [1e-300, 1e-300]))[0] == pytest.approx(1.0)
    with pytest.raises(ContractError):
        uncertainty_regression(_binary([0.5]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 3)), min_size=1, max_size=8))
def test_regression_uncertainty_is_mixture_variance(components):
    mu = np.array([c[0] for c in components])
    s = np.array([c[1] for c in components])
    ref = np.mean(s**2 + mu**2) - np.mean(mu) ** 2
    assert uncertainty_regression(_gauss(mu, s))[0] == pytest.approx(ref, rel=1e-9, abs=1e-9)


def brute_auroc(a, b):
    total = 0.0
    for x, y in itertools.product(a, b):
        total += 1.0 if y > x else 0.5 if y == x else 0.0
    return total / (len(a) * len(b))


def test_auroc_cases():
    assert auroc([0, 0], [1, 1]) == 1.0
    assert auroc([0.3, 0.7], [0.3, 0.7]) == 0.5
    with pytest.raises(ContractError):
        auroc([], [1.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_auroc_matches_pair_counting(a, b):
    assert auroc(a, b) == pytest.approx(brute_auroc(a, b), abs=1e-12)


def brute_fpr95(a, b):
    best = 1.0
    for t in sorted(set(a) | set(b)):
        if np.mean(np.asarray(b) >= t) >= 0.95:
            best = min(best, float(np.mean(np.asarray(a) >= t)))
    return best


def test_fpr95_cases():
    assert fpr_at_95_tpr([0.0, 0.1, 0.2], [1.0, 2.0, 3.0]) == 0.0
    s = np.linspace(0, 1, 100)
    assert fpr_at_95_tpr(s, s) >= 0.90


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=30), st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_fpr95_matches_threshold_scan(a, b):
    assert fpr_at_95_tpr(a, b) == brute_fpr95(a, b)


def test_nll_cases():
    assert test_nll(_gauss([0.4], [1.0]), [0.4]) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)
    assert test_nll(_binary([1.0]), [1]) == pytest.approx(0.0, abs=1e-12)
    # zero variance is floored rather than dividing by zero
    assert np.isfinite(test_nll(_gauss([0.0], [0.0]), [0.0]))
    with pytest.raises(ContractError):
        test_nll(_gauss([0.0], [1.0]), [0.0, 1.0])


def _model(head="gaussian", u_init=-2.0, kind="scaling"):
    spec = NetworkSpec(2, (8, 8), head=head)
    layout = WeightLayout.from_spec(spec)
    w = nn.init_weights(spec, layout, RandomStream(0))
    bases = tuple(np.eye(f) for f, _ in layout.shapes) if kind == "svd" else ()
    return spec, layout, w, make_distribution(kind, w, layout, u_init=u_init, bases=bases)


def test_degenerate_distribution_predicts_mean_network():
    spec, layout, w, dist = _model(u_init=-np.inf)
    X = np.random.default_rng(0).normal(size=(5, 2))
    s = predict_samples(dist, spec, X, P=4)
    ref, _ = nn.forward(spec, layout, w, X)
    for p in range(4):
        np.testing.assert_array_equal(s.outputs[p], ref)


def test_predict_samples_deterministic_and_shapes():
    spec, layout, w, dist = _model("binary")
    X = np.random.default_rng(1).normal(size=(6, 2))
    a = predict_samples(dist, spec, X, P=5, seed=3)
    b = predict_samples(dist, spec, X, P=5, seed=3)
    assert a.outputs.shape == (5, 6, 2)
    assert a.outputs.tobytes() == b.outputs.tobytes()
    np.testing.assert_allclose(a.outputs.sum(axis=2), 1.0)
    assert not np.array_equal(a.outputs, predict_samples(dist, spec, X, P=5, seed=4).outputs)


def test_ensemble_and_weight_list_inputs():
    spec, layout, w, dist = _model()
    X = np.zeros((3, 2))
    ens = EnsembleDistribution((dist, dist.with_u(dist.u - 1)))
    assert predict_samples(ens, spec, X, P=4).size == 8
    assert predict_samples([w, w + 1], spec, X).size == 2
    assert predict_samples(w, spec, X).size == 1
    with pytest.raises(ContractError):
        predict_samples(w, spec, X, P=0)


def test_evaluate_report():
    spec, layout, w, dist = _model()
    rng = np.random.default_rng(2)
    X_id, X_ood = rng.normal(size=(20, 2)), 5 + rng.normal(size=(10, 2))
    report, s_id, s_ood = evaluate(dist, spec, X_id, X_ood, y_test=rng.normal(size=20), P=8, method="m",
                                   dataset="d", split="s")
    assert report.auroc == auroc(s_id, s_ood)
    assert report.fpr95 == fpr_at_95_tpr(s_id, s_ood)
    assert np.isfinite(report.test_nll)
    assert json.loads(report.to_json())["p"] == 8
    assert np.all(uncertainty(predict_samples(dist, spec, X_id, 8)) == s_id)


def test_scores_csv_layout():
    text = scores_csv([0.5], [1.0, 2.0])
    assert text.splitlines() == ["id,is_ood,uncertainty", "0,0,0.5", "1,1,1.0", "2,1,2.0"]


def test_amplitude_diagnostic_structure():
    spec, layout, w, dist = _model()
    X = np.random.default_rng(3).normal(size=(30, 2))
    layers = amplitude_diagnostic(dist, spec, layout, X, n_z=4)
    assert [l.layer for l in layers] == [0, 1, 2]
    assert [len(l.a2) for l in layers] == [2, 8, 8]
    # constant phi gives an undefined rank correlation
    assert all(math.isnan(l.spearman) for l in layers)
    np.testing.assert_allclose(layers[0].a2, np.mean(X * X, axis=0))
    with pytest.raises(ContractError):
        amplitude_diagnostic(_model(kind="svd")[3], spec, layout, X)


def test_amplitude_diagnostic_reversed_order():
    spec, layout, w, dist = _model()
    X = np.random.default_rng(4).normal(size=(30, 2)) * [1.0, 3.0]
    u = dist.u.copy()
    u[layout.weight_slices[0]] = np.repeat([1.0, -1.0], 8)  # larger scales leave the low-amplitude input
    layers = amplitude_diagnostic(dist.with_u(u), spec, layout, X, n_z=2)
    assert layers[0].spearman == pytest.approx(-1.0)
