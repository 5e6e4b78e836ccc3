"""Predictive sampling, uncertainty scores and OOD detection metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata, spearmanr

from . import network as nn
from .network import NetworkSpec, WeightLayout
from .numerics import ContractError
from .stochastic import EnsembleDistribution, WeightDistribution, realize_weights

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictionSample:
    """Stacked head outputs of ``S`` networks on ``n`` inputs.

    ``outputs`` has shape ``(S, n, k)``. Regression samples hold columns
    ``(mu, sigma)``; linear heads get ``sigma = 0``. Classification samples
    hold class probabilities (two columns for a binary head).
    """

    task: str
    outputs: np.ndarray

    @property
    def size(self) -> int:
        return self.outputs.shape[0]

    @property
    def mu(self):
        return self.outputs[:, :, 0]

    @property
    def sigma(self):
        return self.outputs[:, :, 1]

    @property
    def probs(self):
        return self.outputs


def _head_sample(spec: NetworkSpec, out):
    if spec.head == "binary":
        return np.concatenate([1.0 - out, out], axis=1)
    if spec.head == "linear":
        return np.column_stack([out[:, 0], np.zeros(len(out))])
    return out


def predict_samples(model, spec: NetworkSpec, X, P: int = 50, seed: int = 0) -> PredictionSample:
    """Forward ``P`` weight draws of ``model`` on ``X``.

    ``model`` may be a single weight vector, a list of weight vectors (a
    deep ensemble, one prediction per member), a :class:`WeightDistribution`
    or an :class:`EnsembleDistribution` (``P`` draws per member, pooled).
    """
    if P < 1:
        raise ContractError("P must be >= 1")
    layout = WeightLayout.from_spec(spec)
    if isinstance(model, WeightDistribution):
        stream = model.stream(seed, 0)
        weights = [realize_weights(model, stream.sample_z(layout.d)) for _ in range(P)]
    elif isinstance(model, EnsembleDistribution):
        weights = []
        for j, member in enumerate(model.members):
            stream = member.stream(seed, j)
            weights.extend(realize_weights(member, stream.sample_z(layout.d)) for _ in range(P))
    elif isinstance(model, np.ndarray) and model.ndim == 1:
        weights = [model]
    else:
        weights = [np.asarray(w, dtype=np.float64) for w in model]
    outs = np.stack([_head_sample(spec, nn.forward(spec, layout, w, X)[0]) for w in weights])
    return PredictionSample(spec.task, outs)


def _xlogx(p):
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def uncertainty_classification(sample: PredictionSample) -> np.ndarray:
    """Entropy (natural log) of the sample-averaged class probabilities."""
    if sample.task != "classification":
        raise ContractError("expected a classification sample")
    pbar = sample.probs.mean(axis=0)
    return np.maximum(-_xlogx(pbar).sum(axis=1), 0.0)


def uncertainty_regression(sample: PredictionSample) -> np.ndarray:
    """Variance of the equal-weight Gaussian mixture of the sampled heads.

    Computed as mean aleatoric variance plus the spread of the means, which
    equals ``mean(sigma^2 + mu^2) - mean(mu)^2`` without its cancellation.
    """
    if sample.task != "regression":
        raise ContractError("expected a regression sample")
    mu, sigma = sample.mu, sample.sigma
    return np.mean(sigma**2, axis=0) + np.mean((mu - mu.mean(axis=0)) ** 2, axis=0)


def uncertainty(sample: PredictionSample) -> np.ndarray:
    if sample.task == "classification":
        return uncertainty_classification(sample)
    return uncertainty_regression(sample)


def _check_scores(scores_id, scores_ood):
    a = np.asarray(scores_id, dtype=np.float64).ravel()
    b = np.asarray(scores_ood, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ContractError("score vectors must be non-empty")
    return a, b


def auroc(scores_id, scores_ood) -> float:
    """Probability that an OOD score exceeds an ID score, ties counting one half."""
    a, b = _check_scores(scores_id, scores_ood)
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def fpr_at_95_tpr(scores_id, scores_ood) -> float:
    """Fraction of ID scores flagged when 95% of OOD scores are flagged.

    A score is flagged when it is ``>= t``; ``t`` is the largest threshold
    that still flags at least 95% of the OOD scores.
    """
    a, b = _check_scores(scores_id, scores_ood)
    k = math.ceil(0.95 * b.size)
    t = np.sort(b)[::-1][k - 1]
    return float(np.mean(a >= t))


def test_nll(sample: PredictionSample, y) -> float:
    """Mean negative log-likelihood of the averaged prediction.

    Regression uses the Gaussian ``N(mean mu, uncertainty)`` including the
    ``0.5 log(2 pi)`` constant, with the variance floored at 1e-12.
    """
    y = np.asarray(y)
    if len(y) != sample.outputs.shape[1]:
        raise ContractError("y length does not match the number of inputs")
    if sample.task == "classification":
        pbar = sample.probs.mean(axis=0)
        p = pbar[np.arange(len(y)), y.astype(int)]
        return float(-np.mean(np.log(np.maximum(p, VAR_FLOOR))))
    var = np.maximum(uncertainty_regression(sample), VAR_FLOOR)
    r = y.astype(np.float64) - sample.mu.mean(axis=0)
    return float(np.mean(0.5 * np.log(2 * math.pi * var) + r * r / (2 * var)))


test_nll.__test__ = False  # not a pytest test despite the name


@dataclass(frozen=True)
class LayerAmplitude:
    layer: int
    a2: np.ndarray
    phi2: np.ndarray
    spearman: float


def amplitude_diagnostic(dist: WeightDistribution, spec: NetworkSpec, layout: WeightLayout, X_train,
                         n_z: int = 32, seed: int = 0):
    """Mean squared input amplitude of each neuron against the mean ``phi^2`` of its outgoing weights.

    Layer ``l`` compares ``a2[k] = mean_i E[psi_l,k(x_i)^2]`` (estimated over
    ``n_z`` weight draws) with ``mean_j phi^2`` over the weights leaving
    neuron ``k``. Layer 0 is the network input.
    """
    if dist.kind != "scaling":
        raise ContractError("the amplitude diagnostic needs a scaling-kind distribution")
    stream = dist.stream(seed, 7)
    acc = [np.zeros(fan_in) for fan_in, _ in layout.shapes]
    for _ in range(n_z):
        _, hidden = nn.forward(spec, layout, realize_weights(dist, stream.sample_z(layout.d)), X_train)
        for l, h in enumerate(hidden):
            acc[l] += np.mean(h * h, axis=0)
    phi2 = dist.phi**2
    out = []
    for l, (ws, shape) in enumerate(zip(layout.weight_slices, layout.shapes)):
        a2 = acc[l] / n_z
        p2 = phi2[ws].reshape(shape).mean(axis=1)
        if np.ptp(a2) == 0 or np.ptp(p2) == 0:
            rho = math.nan
        else:
            rho = float(spearmanr(a2, p2).statistic)
        out.append(LayerAmplitude(l, a2, p2, rho))
    return out


@dataclass(frozen=True)
class EvalReport:
    method: str
    dataset: str
    split: str
    auroc: float
    fpr95: float
    test_nll: float
    p: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def scores_csv(scores_id, scores_ood) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "is_ood", "uncertainty"])
    k = 0
    for flag, scores in ((0, scores_id), (1, scores_ood)):
        for s in np.asarray(scores, dtype=np.float64):
            w.writerow([k, flag, repr(float(s))])
            k += 1
    return buf.getvalue()


def evaluate(model, spec: NetworkSpec, X_id, X_ood, *, y_test=None, X_test=None, P=50, seed=0,
             method="", dataset="", split=""):
    """Score ID and OOD inputs and summarize them in an :class:`EvalReport`.

    ``test_nll`` is computed on ``(X_test, y_test)`` when given, otherwise
    it is NaN. Returns ``(report, scores_id, scores_ood)``.
    """
    s_id = uncertainty(predict_samples(model, spec, X_id, P, seed))
    s_ood = uncertainty(predict_samples(model, spec, X_ood, P, seed))
    nll = math.nan
    if y_test is not None:
        nll = test_nll(predict_samples(model, spec, X_id if X_test is None else X_test, P, seed), y_test)
    report = EvalReport(method, dataset, split, auroc(s_id, s_ood), fpr_at_95_tpr(s_id, s_ood), nll, P, seed)
    return report, s_id, s_ood
