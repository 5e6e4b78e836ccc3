"""Fully-connected networks evaluated on an explicit flat weight vector.

All weights live in a single 1-D array so that stochastic models can
perturb them as a whole. :class:`WeightLayout` maps that array onto the
per-layer matrices: layer ``l`` stores a ``(fan_in, fan_out)`` matrix in
row-major order, followed by its bias vector. Column ``j`` of a layer
matrix holds the incoming weights of neuron ``j`` in the next layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, NumericalError, RandomStream

HEADS = ("gaussian", "binary", "multiclass", "linear")
ACTIVATIONS = ("relu", "leaky_relu")

SIGMA_FLOOR = 1e-6
PROB_CLIP = 1e-12
LEAKY_SLOPE = 0.01


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a fully-connected network.

    ``head`` selects the output layer and its loss:

    * ``"gaussian"``: two outputs, mean and a softplus standard deviation,
      trained with the Gaussian negative log-likelihood;
    * ``"binary"``: one logit, sigmoid probability, binary cross-entropy;
    * ``"multiclass"``: ``n_classes`` logits, softmax, categorical
      cross-entropy;
    * ``"linear"``: ``n_outputs`` identity outputs with mean squared error.
    """

    input_dim: int
    hidden: tuple = (100, 100, 100)
    activation: str = "relu"
    head: str = "gaussian"
    n_classes: int = 2
    n_outputs: int = 1
    use_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ContractError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ContractError(f"unknown head {self.head!r}")
        if self.head == "multiclass" and self.n_classes < 2:
            raise ContractError("multiclass head needs n_classes >= 2")

    @property
    def output_dim(self) -> int:
        return {
            "gaussian": 2,
            "binary": 1,
            "multiclass": self.n_classes,
            "linear": self.n_outputs,
        }[self.head]

    @property
    def task(self) -> str:
        return "classification" if self.head in ("binary", "multiclass") else "regression"

    @property
    def widths(self) -> tuple:
        return (self.input_dim, *self.hidden, self.output_dim)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "head": self.head,
            "n_classes": self.n_classes,
            "n_outputs": self.n_outputs,
            "use_bias": self.use_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**{**d, "hidden": tuple(d["hidden"])})


@dataclass(frozen=True)
class WeightLayout:
    """Offsets of each layer's weight matrix and bias inside the flat vector."""

    shapes: tuple
    weight_slices: tuple
    bias_slices: tuple
    d: int

    @classmethod
    def from_spec(cls, spec: NetworkSpec) -> "WeightLayout":
        widths = spec.widths
        shapes, wsl, bsl = [], [], []
        pos = 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            shapes.append((fan_in, fan_out))
            wsl.append(slice(pos, pos + fan_in * fan_out))
            pos += fan_in * fan_out
            if spec.use_bias:
                bsl.append(slice(pos, pos + fan_out))
                pos += fan_out
            else:
                bsl.append(None)
        return cls(tuple(shapes), tuple(wsl), tuple(bsl), pos)

    @property
    def n_layers(self) -> int:
        return len(self.shapes)

    def unflatten(self, w):
        """Split ``w`` into lists of weight matrices and bias vectors (views)."""
        w = np.asarray(w)
        if w.shape != (self.d,):
            raise ContractError(f"weight vector has shape {w.shape}, expected ({self.d},)")
        mats = [w[s].reshape(shape) for s, shape in zip(self.weight_slices, self.shapes)]
        biases = [None if s is None else w[s] for s in self.bias_slices]
        return mats, biases

    def flatten(self, mats, biases) -> np.ndarray:
        w = np.empty(self.d)
        for m, b, ws, bs in zip(mats, biases, self.weight_slices, self.bias_slices):
            w[ws] = np.ravel(m)
            if bs is not None:
                w[bs] = b
        return w

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.d, dtype=bool)
        for bs in self.bias_slices:
            if bs is not None:
                mask[bs] = True
        return mask

    def index(self, layer: int, k: int, j: int) -> int:
        """Flat index of the weight from neuron ``k`` of ``layer`` to neuron ``j`` of the next."""
        fan_in, fan_out = self.shapes[layer]
        if not (0 <= k < fan_in and 0 <= j < fan_out):
            raise IndexError((layer, k, j))
        return self.weight_slices[layer].start + k * fan_out + j


def init_weights(spec: NetworkSpec, layout: WeightLayout, stream: RandomStream) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    mats, biases = [], []
    for fan_in, fan_out in layout.shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        mats.append(stream.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return layout.flatten(mats, biases)


def _activate(spec, h):
    if spec.activation == "relu":
        return np.maximum(h, 0.0)
    return np.where(h > 0.0, h, LEAKY_SLOPE * h)


def _activation_grad(spec, pre):
    if spec.activation == "relu":
        return (pre > 0.0).astype(np.float64)
    return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)


def _check_finite(name, arr):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = np.flatnonzero(bad.ravel())[0]
        raise NumericalError(f"non-finite {name} at flat index {idx}")


def _forward_raw(spec, layout, w, X):
    mats, biases = layout.unflatten(w)
    hidden = [X]
    pre = []
    h = X
    last = layout.n_layers - 1
    for l, (W, b) in enumerate(zip(mats, biases)):
        a = h @ W
        if b is not None:
            a = a + b
        if l == last:
            return a, hidden, pre
        pre.append(a)
        h = _activate(spec, a)
        hidden.append(h)
    raise AssertionError("unreachable")


def head_outputs(spec: NetworkSpec, raw):
    """Map raw output-layer values to the head's prediction."""
    if spec.head == "gaussian":
        mu = raw[:, 0]
        sigma = softplus(raw[:, 1]) + SIGMA_FLOOR
        return np.column_stack([mu, sigma])
    if spec.head == "binary":
        return sigmoid(raw)
    if spec.head == "multiclass":
        z = raw - raw.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    return raw


def forward(spec: NetworkSpec, layout: WeightLayout, w, X):
    """Evaluate the network.

    Returns ``(outputs, hidden)`` where ``hidden[0]`` is ``X`` and
    ``hidden[l]`` the post-activation representation of hidden layer ``l``.
    Gaussian heads return columns ``(mu, sigma)``; binary heads the
    probability of class 1; multiclass heads the softmax probabilities.
    """
    w = np.asarray(w, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ContractError(f"X must have shape (n, {spec.input_dim}), got {X.shape}")
    _check_finite("weight", w)
    _check_finite("input", X)
    raw, hidden, _ = _forward_raw(spec, layout, w, X)
    return head_outputs(spec, raw), hidden


def loss_classification(probs, y) -> float:
    """Mean cross-entropy of predicted probabilities.

    ``probs`` is either a vector of class-1 probabilities (binary) or an
    ``(n, K)`` matrix of class probabilities with integer labels ``y``.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(y)
    if p.ndim == 2 and p.shape[1] > 1:
        return float(-np.mean(np.log(p[np.arange(len(y)), y.astype(int)])))
    p = p.ravel()
    y = y.astype(np.float64).ravel()
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_regression_nll(mu, sigma, y) -> float:
    """Mean Gaussian negative log-likelihood without the 0.5*log(2*pi) constant."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ContractError("sigma must be strictly positive")
    r = np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return float(np.mean(0.5 * (np.log(sigma**2) + r**2 / sigma**2)))


def _loss_terms(spec, raw, y):
    """Per-sample losses and d(loss_i)/d(raw_i) for the head."""
    y = np.asarray(y)
    if spec.head == "gaussian":
        y = y.astype(np.float64).ravel()
        mu = raw[:, 0]
        sigma = softplus(raw[:, 1]) + SIGMA_FLOOR
        r = y - mu
        inv_var = 1.0 / sigma**2
        losses = 0.5 * (2.0 * np.log(sigma) + r * r * inv_var)
        dmu = -r * inv_var
        dsigma = 1.0 / sigma - r * r * inv_var / sigma
        grad = np.column_stack([dmu, dsigma * sigmoid(raw[:, 1])])
        return losses, grad
    if spec.head == "binary":
        yb = y.astype(np.float64).ravel()
        z = raw[:, 0]
        losses = softplus(z) - yb * z
        return losses, (sigmoid(z) - yb)[:, None]
    if spec.head == "multiclass":
        labels = y.astype(int).ravel()
        zmax = raw.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(raw - zmax).sum(axis=1))
        rows = np.arange(len(labels))
        losses = lse - raw[rows, labels]
        grad = np.exp(raw - lse[:, None])
        grad[rows, labels] -= 1.0
        return losses, grad
    yt = y.astype(np.float64).reshape(raw.shape)
    r = raw - yt
    return np.sum(r * r, axis=1), 2.0 * r


def per_sample_loss(spec: NetworkSpec, layout: WeightLayout, w, X, y) -> np.ndarray:
    raw, _, _ = _forward_raw(spec, layout, np.asarray(w, dtype=np.float64), np.asarray(X, dtype=np.float64))
    losses, _ = _loss_terms(spec, raw, y)
    return losses


def loss(spec: NetworkSpec, layout: WeightLayout, w, X, y) -> float:
    return float(np.mean(per_sample_loss(spec, layout, w, X, y)))


def loss_and_grad(spec: NetworkSpec, layout: WeightLayout, w, X, y):
    """Mean head loss over the batch and its exact gradient with respect to ``w``."""
    w = np.asarray(w, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ContractError(f"X must have shape (n, {spec.input_dim}), got {X.shape}")
    n = X.shape[0]
    raw, hidden, pre = _forward_raw(spec, layout, w, X)
    losses, delta = _loss_terms(spec, raw, y)
    value = float(np.mean(losses))
    if not np.isfinite(value):
        raise NumericalError("non-finite loss")
    delta = delta / n
    mats, _ = layout.unflatten(w)
    grad = np.empty(layout.d)
    for l in range(layout.n_layers - 1, -1, -1):
        grad[layout.weight_slices[l]] = (hidden[l].T @ delta).ravel()
        bs = layout.bias_slices[l]
        if bs is not None:
            grad[bs] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ mats[l].T) * _activation_grad(spec, pre[l - 1])
    return value, grad


def grad_w(spec: NetworkSpec, layout: WeightLayout, w, X, y) -> np.ndarray:
    return loss_and_grad(spec, layout, w, X, y)[1]
