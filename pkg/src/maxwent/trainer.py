"""Pretraining, SVD basis construction and MaxWEnt scale fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as nn
from .network import NetworkSpec, WeightLayout
from .numerics import ContractError, NumericalError, RandomStream, sym_eigendecomposition
from .stochastic import (
    WeightDistribution,
    entropy_gradient,
    entropy_proxy,
    noise_vjp,
    realize_weights,
)

# child-stream keys, fixed so that runs are reproducible from the seed alone
_INIT, _BATCH, _NOISE, _VALZ = 1, 2, 3, 4


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``lam`` multiplies the mean-normalized entropy proxy, i.e. it acts as
    ``lam / d`` on the summed log-scales. Set ``entropy_normalization`` to
    ``"sum"`` to apply ``lam`` to the unnormalized sum instead.

    ``maxwent_learning_rate`` overrides ``learning_rate`` for the scale
    fit. ``val_gate = False`` accepts every checkpoint of the scale fit
    regardless of the validation threshold.
    """

    lam: float = 10.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    pretrain_iters: int = 10_000
    maxwent_iters: int = 20_000
    mc_samples: int = 1
    seed: int = 0
    val_check_every: int = 100
    val_z_samples: int = 10
    u_init: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    entropy_normalization: str = "mean"
    with_replacement: bool = False
    maxwent_learning_rate: float | None = None
    val_gate: bool = True

    def __post_init__(self):
        counts = (self.batch_size, self.mc_samples, self.val_check_every, self.val_z_samples)
        if min(counts) < 1 or self.pretrain_iters < 0 or self.maxwent_iters < 0:
            raise ContractError("iteration and sample counts must be positive")
        if self.lam < 0:
            raise ContractError("lam must be non-negative")
        if self.entropy_normalization not in ("mean", "sum"):
            raise ContractError("entropy_normalization must be 'mean' or 'sum'")


class Adam:
    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    @classmethod
    def from_config(cls, size, cfg: TrainConfig) -> "Adam":
        return cls(size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class MiniBatches:
    """Index batches from shuffled epochs, or uniform draws with replacement."""

    def __init__(self, n, batch_size, stream: RandomStream, with_replacement=False):
        self.n = n
        self.size = min(batch_size, n)
        self.stream = stream
        self.with_replacement = with_replacement
        self._order = np.arange(n)
        self._pos = n

    def next(self) -> np.ndarray:
        if self.size == self.n:
            return self._order
        if self.with_replacement:
            return self.stream.integers(self.n, self.size)
        if self._pos + self.size > self.n:
            self._order = self.stream.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.size]
        self._pos += self.size
        return idx


def _check_data(data, spec):
    if data is None or len(data.y) == 0:
        raise ContractError("dataset must be non-empty")
    if data.X.shape[1] != spec.input_dim:
        raise ContractError("dataset width does not match the network input dimension")


def _loss_and_grad(spec, layout, w, X, y, it):
    """``nn.loss_and_grad`` that reports divergence with the iteration number."""
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            value, g = nn.loss_and_grad(spec, layout, w, X, y)
        except NumericalError as exc:
            raise NumericalError(f"{exc} at iteration {it}", it) from None
    if not np.isfinite(value) or not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite loss at iteration {it}", it)
    return value, g


def pretrain(spec: NetworkSpec, data_train, data_val, cfg: TrainConfig, w_init=None, history=None):
    """Fit deterministic weights with Adam.

    Every ``cfg.val_check_every`` iterations the validation loss is
    evaluated; the weights with the best validation loss are returned.
    Without validation data the final weights are returned.
    """
    _check_data(data_train, spec)
    layout = WeightLayout.from_spec(spec)
    root = RandomStream(cfg.seed)
    w = nn.init_weights(spec, layout, root.child(_INIT)) if w_init is None else np.array(w_init, dtype=np.float64)
    batches = MiniBatches(len(data_train.y), cfg.batch_size, root.child(_BATCH), cfg.with_replacement)
    opt = Adam.from_config(layout.d, cfg)
    best_w, best_val = w.copy(), math.inf
    if data_val is not None and cfg.pretrain_iters > 0:
        best_val = nn.loss(spec, layout, w, data_val.X, data_val.y)
    running = []
    for it in range(1, cfg.pretrain_iters + 1):
        idx = batches.next()
        value, g = _loss_and_grad(spec, layout, w, data_train.X[idx], data_train.y[idx], it)
        w = opt.step(w, g)
        running.append(value)
        if it % cfg.val_check_every == 0 or it == cfg.pretrain_iters:
            val = math.nan
            if data_val is not None:
                val = nn.loss(spec, layout, w, data_val.X, data_val.y)
                if val < best_val:
                    best_val, best_w = val, w.copy()
            if history is not None:
                history.append({
                    "iteration": it,
                    "train_loss": float(np.mean(running)),
                    "val_nll": float(val),
                    "entropy_proxy": -math.inf,
                    "accepted": int(val == best_val),
                })
            running = []
    return best_w if data_val is not None else w


def validation_threshold(w_bar, spec: NetworkSpec, data_val) -> float:
    """Validation loss of ``w_bar`` plus twice its standard error."""
    layout = WeightLayout.from_spec(spec)
    losses = nn.per_sample_loss(spec, layout, w_bar, data_val.X, data_val.y)
    mean = float(np.mean(losses))
    return mean + 2.0 / len(losses) * math.sqrt(float(np.sum((losses - mean) ** 2)))


def build_svd_bases(spec: NetworkSpec, layout: WeightLayout, w_bar, X_train, return_eigenvalues=False):
    """Eigenbases of ``psi_l.T @ psi_l / n`` for every layer input ``psi_l``.

    ``psi_0`` is the network input and ``psi_l`` the ``l``-th hidden
    representation of the pretrained network.
    """
    _, hidden = nn.forward(spec, layout, w_bar, X_train)
    n = hidden[0].shape[0]
    bases, spectra = [], []
    for psi in hidden:
        V, s2 = sym_eigendecomposition(psi.T @ psi / n)
        bases.append(V)
        spectra.append(s2)
    return (bases, spectra) if return_eigenvalues else bases


@dataclass
class FitResult:
    distribution: WeightDistribution
    history: list = field(default_factory=list)
    tau: float = math.inf
    accepted_iteration: int = 0

    @property
    def entropy_trajectory(self):
        return np.array([h["entropy_proxy"] for h in self.history])

    @property
    def val_trajectory(self):
        return np.array([h["val_nll"] for h in self.history])

    @property
    def train_trajectory(self):
        return np.array([h["train_loss"] for h in self.history])


def stochastic_val_loss(dist: WeightDistribution, spec, data_val, zs) -> float:
    """Average validation loss over a fixed list of latent draws."""
    layout = dist.layout
    return float(np.mean([nn.loss(spec, layout, realize_weights(dist, z), data_val.X, data_val.y) for z in zs]))


def maxwent_fit(dist_init: WeightDistribution, spec: NetworkSpec, data_train, data_val, cfg: TrainConfig,
                callback=None) -> FitResult:
    """Fit the raw scales ``u`` of ``dist_init`` with the mean weights frozen.

    Each iteration minimizes, on one mini-batch, the Monte Carlo estimate of
    the average loss under the distribution minus ``lam`` times the entropy
    proxy. Every ``cfg.val_check_every`` iterations the average validation
    loss over a fixed set of ``cfg.val_z_samples`` latent draws is compared to
    the threshold from :func:`validation_threshold`; the returned scales are
    the last ones that passed. Without validation data every check passes.

    ``callback(record, dist)`` is called after every check with the history
    record and the current distribution.
    """
    _check_data(data_train, spec)
    layout = dist_init.layout
    d = layout.d
    root = RandomStream(cfg.seed, dist_init.law)
    noise = root.child(_NOISE)
    batches = MiniBatches(len(data_train.y), cfg.batch_size, root.child(_BATCH), cfg.with_replacement)
    val_stream = root.child(_VALZ)
    val_zs = [val_stream.sample_z(d) for _ in range(cfg.val_z_samples)]
    tau = validation_threshold(dist_init.mean, spec, data_val) if data_val is not None else math.inf
    lam = cfg.lam * (d if cfg.entropy_normalization == "sum" else 1.0)

    lr = cfg.learning_rate if cfg.maxwent_learning_rate is None else cfg.maxwent_learning_rate
    opt = Adam(d, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    dist = dist_init
    history = []

    def check(it, train_loss):
        val = math.nan
        if data_val is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    val = stochastic_val_loss(dist, spec, data_val, val_zs)
                except NumericalError as exc:
                    raise NumericalError(f"{exc} at iteration {it}", it) from None
        ok = data_val is None or not cfg.val_gate or val <= tau
        history.append({
            "iteration": it,
            "train_loss": float(train_loss),
            "val_nll": float(val),
            "entropy_proxy": entropy_proxy(dist),
            "accepted": int(ok),
        })
        if callback is not None:
            callback(history[-1], dist)
        return ok

    accepted, accepted_it = dist, 0
    check(0, math.nan)
    running = []
    for it in range(1, cfg.maxwent_iters + 1):
        idx = batches.next()
        Xb, yb = data_train.X[idx], data_train.y[idx]
        grad_u = np.zeros(d)
        batch_loss = 0.0
        for _ in range(cfg.mc_samples):
            z = noise.sample_z(d)
            value, gw = _loss_and_grad(spec, layout, realize_weights(dist, z), Xb, yb, it)
            batch_loss += value
            grad_u += noise_vjp(dist, z, gw)
        batch_loss /= cfg.mc_samples
        grad_u /= cfg.mc_samples
        objective = batch_loss - lam * entropy_proxy(dist)
        grad_u -= lam * entropy_gradient(dist)
        if not np.isfinite(objective) or not np.all(np.isfinite(grad_u)):
            raise NumericalError(f"non-finite objective at iteration {it}", it)
        dist = dist.with_u(opt.step(dist.u, grad_u))
        running.append(batch_loss)
        if it % cfg.val_check_every == 0 or it == cfg.maxwent_iters:
            if check(it, np.mean(running)):
                accepted, accepted_it = dist, it
            running = []
    return FitResult(accepted, history, tau, accepted_it)


def fit_deep_ensemble(spec: NetworkSpec, data_train, data_val, cfg: TrainConfig, m: int = 5):
    """Pretrain ``m`` networks from seeds ``cfg.seed + j``."""
    if m < 1:
        raise ContractError("ensemble size must be >= 1")
    return [pretrain(spec, data_train, data_val, replace(cfg, seed=cfg.seed + j)) for j in range(m)]


def bnn_kl(mu, sigma, sigma0=1.0) -> float:
    """KL divergence from N(mu, diag(sigma^2)) to the prior N(0, sigma0^2 I)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or sigma0 <= 0:
        raise ContractError("scales must be strictly positive")
    ratio = sigma**2 / sigma0**2
    return float(np.sum(mu**2) / (2 * sigma0**2) + 0.5 * np.sum(ratio - np.log(ratio)) - mu.size / 2)


def fit_bnn(spec: NetworkSpec, data_train, data_val, cfg: TrainConfig, *, mean_init=None,
            prior_sigma: float = 1.0, kl_weight: float = 1.0, history=None) -> WeightDistribution:
    """Mean-field Gaussian variational baseline.

    Minimizes the mini-batch loss plus ``kl_weight * KL / n_train`` over both
    the means and the raw scales; the iterate with the best average
    validation loss is restored.
    """
    _check_data(data_train, spec)
    layout = WeightLayout.from_spec(spec)
    root = RandomStream(cfg.seed, "normal")
    mu = nn.init_weights(spec, layout, root.child(_INIT)) if mean_init is None else np.array(mean_init, dtype=np.float64)
    rho = np.full(layout.d, -5.0 if cfg.u_init is None else cfg.u_init)
    batches = MiniBatches(len(data_train.y), cfg.batch_size, root.child(_BATCH), cfg.with_replacement)
    noise = root.child(_NOISE)
    val_stream = root.child(_VALZ)
    val_zs = [val_stream.sample_z(layout.d) for _ in range(cfg.val_z_samples)]
    opt = Adam.from_config(2 * layout.d, cfg)
    scale = kl_weight / len(data_train.y)
    d = layout.d

    def as_dist(mu, rho):
        return WeightDistribution("scaling", mu, rho, layout, law="normal")

    best, best_val = as_dist(mu, rho), math.inf
    for it in range(1, cfg.maxwent_iters + 1):
        idx = batches.next()
        sigma = nn.softplus(rho)
        z = noise.sample_z(d)
        value, gw = _loss_and_grad(spec, layout, mu + sigma * z, data_train.X[idx], data_train.y[idx], it)
        g_mu = gw + scale * mu / prior_sigma**2
        g_sigma = gw * z + scale * (sigma / prior_sigma**2 - 1.0 / sigma)
        params = opt.step(np.concatenate([mu, rho]), np.concatenate([g_mu, g_sigma * nn.sigmoid(rho)]))
        mu, rho = params[:d], params[d:]
        if data_val is not None and (it % cfg.val_check_every == 0 or it == cfg.maxwent_iters):
            dist = as_dist(mu, rho)
            val = stochastic_val_loss(dist, spec, data_val, val_zs)
            if val < best_val:
                best, best_val = dist, val
            if history is not None:
                history.append({"iteration": it, "train_loss": value, "val_nll": val,
                                "entropy_proxy": entropy_proxy(dist), "accepted": int(val == best_val)})
    return best if data_val is not None else as_dist(mu, rho)
