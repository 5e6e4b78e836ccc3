"""Maximum weight entropy stochastic neural networks.

A pretrained network's weights are kept as the mean of a weight
distribution whose per-weight scales are grown to maximize entropy while
the average training loss stays low. Two parameterizations are provided:
independent scaling of every weight, and scaling along the eigenbasis of
each layer's input representation (SVD kind).
"""

from .data import Dataset, SplitSpec, gen_1d_regression, gen_two_moons, load_csv, pca_split, standardize_fit_apply
from .evaluation import (
    EvalReport,
    PredictionSample,
    amplitude_diagnostic,
    auroc,
    fpr_at_95_tpr,
    predict_samples,
    test_nll,
    uncertainty_classification,
    uncertainty_regression,
)
from .network import NetworkSpec, WeightLayout, forward, grad_w, loss, loss_and_grad
from .numerics import ContractError, NumericalError, RandomStream, sample_z, sym_eigendecomposition
from .stochastic import (
    EnsembleDistribution,
    WeightDistribution,
    entropy_proxy,
    make_distribution,
    realize_weights,
)
from .trainer import (
    TrainConfig,
    bnn_kl,
    build_svd_bases,
    fit_bnn,
    fit_deep_ensemble,
    maxwent_fit,
    pretrain,
    validation_threshold,
)

__all__ = [
    "ContractError",
    "Dataset",
    "EnsembleDistribution",
    "EvalReport",
    "NetworkSpec",
    "NumericalError",
    "PredictionSample",
    "RandomStream",
    "SplitSpec",
    "TrainConfig",
    "WeightDistribution",
    "WeightLayout",
    "amplitude_diagnostic",
    "auroc",
    "bnn_kl",
    "build_svd_bases",
    "entropy_proxy",
    "fit_bnn",
    "fit_deep_ensemble",
    "forward",
    "fpr_at_95_tpr",
    "gen_1d_regression",
    "gen_two_moons",
    "grad_w",
    "load_csv",
    "loss",
    "loss_and_grad",
    "make_distribution",
    "maxwent_fit",
    "pca_split",
    "predict_samples",
    "pretrain",
    "realize_weights",
    "sample_z",
    "standardize_fit_apply",
    "sym_eigendecomposition",
    "test_nll",
    "uncertainty_classification",
    "uncertainty_regression",
    "validation_threshold",
]

__version__ = "0.1.0"
