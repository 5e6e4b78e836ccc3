"""Independent reference solutions for the linear model and tiny networks.

For a linear model ``y ~ X w`` with mean weights ``w_bar`` and noise
``A (phi * z)`` (``A`` the identity for the scaling kind, the eigenvector
matrix ``V`` of ``X.T X / n`` for the SVD kind), the average squared error is

    E_z[(1/n) ||X (w_bar + A (phi * z)) - y||^2] = eps + (1/n) ||X A diag(phi)||_F^2

so the objective ``risk - lam * sum(log phi^2)`` is separable in ``phi^2``
and minimized by ``phi_k^2 = lam / c_k`` with ``c_k`` the squared column
norms of ``X A`` divided by ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .network import NetworkSpec, WeightLayout
from .numerics import ContractError, NumericalError, RandomStream, sym_eigendecomposition
from .stochastic import WeightDistribution, entropy_proxy

EPS_REG = 1e-10
LAW_CONSTANT = {"uniform": math.log(2 * math.sqrt(3.0)), "normal": 0.5 * math.log(2 * math.pi * math.e)}


@dataclass(frozen=True)
class LinearInstance:
    """A least-squares problem with its amplitude and spectral summaries."""

    X: np.ndarray
    y: np.ndarray
    lam: float = 1.0
    w_bar: np.ndarray | None = None
    a2: np.ndarray = field(init=False)
    V: np.ndarray = field(init=False)
    s2: np.ndarray = field(init=False)
    eps: float = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ContractError("X must be n x b and y of length n")
        if self.lam < 0:
            raise ContractError("lam must be non-negative")
        n = X.shape[0]
        w = np.linalg.lstsq(X, y, rcond=None)[0] if self.w_bar is None else np.asarray(self.w_bar, dtype=np.float64)
        V, s2 = sym_eigendecomposition(X.T @ X / n)
        for name, value in (("X", X), ("y", y), ("w_bar", w), ("a2", np.sum(X * X, axis=0) / n),
                            ("V", V), ("s2", s2), ("eps", float(np.sum((X @ w - y) ** 2) / n))):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def b(self) -> int:
        return self.X.shape[1]

    def with_lam(self, lam) -> "LinearInstance":
        return LinearInstance(self.X, self.y, lam, self.w_bar)


def random_instance(n=200, b=8, lam=1.0, seed=0, correlation=0.0, scales=None) -> LinearInstance:
    """Gaussian features with equicorrelation ``correlation`` and optional column scales."""
    st = RandomStream(seed)
    Z = st.normal((n, b))
    if correlation:
        Z = math.sqrt(1 - correlation) * Z + math.sqrt(correlation) * st.normal((n, 1))
    if scales is not None:
        Z = Z * np.asarray(scales, dtype=np.float64)
    w = st.normal(b)
    y = Z @ w + 0.1 * st.normal(n)
    return LinearInstance(Z, y, lam)


def linear_spec(inst: LinearInstance) -> NetworkSpec:
    """Bias-free linear network with the instance's input dimension."""
    return NetworkSpec(inst.b, hidden=(), head="linear", use_bias=False)


def closed_form_scaling(inst: LinearInstance) -> np.ndarray:
    """Optimal ``phi^2 = lam / a^2`` for the scaling kind (zeros when ``lam = 0``)."""
    if np.any(inst.a2 <= 0):
        bad = np.flatnonzero(inst.a2 <= 0).tolist()
        raise ContractError(f"zero-amplitude features {bad}: the optimum is unbounded")
    return inst.lam / inst.a2


def closed_form_svd(inst: LinearInstance) -> np.ndarray:
    """Optimal ``phi^2 = lam / s^2`` for the SVD kind (zeros when ``lam = 0``)."""
    if np.any(inst.s2 <= EPS_REG):
        bad = np.flatnonzero(inst.s2 <= EPS_REG).tolist()
        raise ContractError(f"near-zero eigenvalues at indices {bad}")
    return inst.lam / inst.s2


def _basis(inst, kind):
    if kind == "scaling":
        return np.eye(inst.b)
    if kind == "svd":
        return inst.V
    raise ContractError(f"unknown parameterization {kind!r}")


def exact_expected_risk(inst: LinearInstance, phi, kind: str) -> float:
    """Average squared error over the noise, from ``X`` directly."""
    phi = np.asarray(phi, dtype=np.float64)
    XA = inst.X @ _basis(inst, kind)
    return float(np.sum((XA * phi) ** 2) / inst.n + inst.eps)


class GDResult(NamedTuple):
    phi: np.ndarray
    steps: int
    grad_norm: float


class ConvergenceError(NumericalError):
    def __init__(self, message, grad_norm):
        super().__init__(message)
        self.grad_norm = grad_norm


def gd_solve_linear(inst: LinearInstance, kind: str, steps: int = 10_000, lr: float | None = None,
                    tol: float = 1e-8) -> GDResult:
    """Minimize the exact objective by gradient descent over ``t = log phi^2``.

    In ``t`` the objective ``sum(c * exp(t)) - lam * sum(t)`` is convex with
    Hessian ``lam`` at the optimum, so the default step ``1 / lam`` combined
    with Armijo backtracking converges quickly.
    """
    if inst.lam <= 0:
        raise ContractError("lam must be positive for a finite optimum")
    XA = inst.X @ _basis(inst, kind)
    c = np.sum(XA * XA, axis=0) / inst.n
    if np.any(c <= EPS_REG):
        raise ContractError("degenerate direction: the optimum is unbounded")
    lam = inst.lam
    step0 = 1.0 / lam if lr is None else lr

    def f(t):
        return float(np.sum(c * np.exp(t)) - lam * np.sum(t))

    t = np.zeros(inst.b)
    g = c * np.exp(t) - lam
    for k in range(steps):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return GDResult(np.exp(0.5 * t), k, gn)
        step, ft = step0, f(t)
        while True:
            cand = t - step * g
            # slack absorbs round-off in f once the decrease is below resolution
            if f(cand) <= ft - 0.5 * step * gn * gn + 1e-13 * abs(ft) or step < 1e-300:
                break
            step *= 0.5
        t = cand
        g = c * np.exp(t) - lam
    gn = float(np.linalg.norm(g))
    if gn <= tol:
        return GDResult(np.exp(0.5 * t), steps, gn)
    raise ConvergenceError(f"gradient descent stopped with gradient norm {gn:.3e}", gn)


def linear_objective(inst: LinearInstance, phi2, kind: str) -> float:
    phi2 = np.asarray(phi2, dtype=np.float64)
    return exact_expected_risk(inst, np.sqrt(phi2), kind) - inst.lam * float(np.sum(np.log(phi2)))


class Prop4Result(NamedTuple):
    risk_scaling: float
    risk_svd: float
    H_scaling: float
    H_svd: float


def prop4_check(inst: LinearInstance, lam: float | None = None) -> Prop4Result:
    """Risks and summed log-scales of both closed-form optima."""
    if lam is not None:
        inst = inst.with_lam(lam)
    p_scal = closed_form_scaling(inst)
    p_svd = closed_form_svd(inst)
    return Prop4Result(
        exact_expected_risk(inst, np.sqrt(p_scal), "scaling"),
        exact_expected_risk(inst, np.sqrt(p_svd), "svd"),
        float(np.sum(np.log(p_scal))),
        float(np.sum(np.log(p_svd))),
    )


def noise_matrix(dist: WeightDistribution) -> np.ndarray:
    """Matrix ``M`` with ``noise = M (phi * z)`` for an unclipped distribution."""
    layout = dist.layout
    M = np.eye(layout.d)
    if dist.kind == "svd":
        for V, ws, (_, fan_out) in zip(dist.bases, layout.weight_slices, layout.shapes):
            M[ws, ws] = np.kron(V, np.eye(fan_out))
    return M


def exact_entropy_smalld(dist: WeightDistribution) -> float:
    """Differential entropy of the weight distribution, by determinant, for ``d <= 3``."""
    if dist.d > 3:
        raise ContractError(f"exact entropy is only computed for d <= 3, got d = {dist.d}")
    if not math.isinf(dist.clip):
        raise ContractError("a clipped distribution has no density")
    M = noise_matrix(dist)
    phi = dist.phi
    d = dist.d
    if dist.law == "uniform":
        # image of the cube [-sqrt3, sqrt3]^d under M diag(phi)
        return float(np.log(abs(np.linalg.det(2 * math.sqrt(3.0) * M * phi))))
    cov = (M * phi**2) @ M.T
    return float(0.5 * np.log((2 * math.pi * math.e) ** d * np.linalg.det(cov)))


def entropy_affine_gap(dist: WeightDistribution) -> float:
    """``exact - (d K + d/2 * proxy)``; zero up to round-off."""
    d = dist.d
    return exact_entropy_smalld(dist) - (d * LAW_CONSTANT[dist.law] + 0.5 * d * entropy_proxy(dist))


# -- verification runner --------------------------------------------------------

class Check(NamedTuple):
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.abs(b)))


def run_verification(lambda_mismatch: float = 0.0, n_instances: int = 20, seed: int = 0):
    """Cross-check every oracle and return a list of :class:`Check`.

    ``lambda_mismatch`` scales the trade-off handed to the numerical solver
    by ``1 + lambda_mismatch``, a negative control for the scaling check.
    """
    checks = []
    err2 = err3 = err4 = hadamard = 0.0
    for k in range(n_instances):
        inst = random_instance(200, 8, lam=10.0 ** (k % 3 - 1), seed=seed + k,
                               correlation=0.6, scales=np.linspace(0.5, 2.0, 8))
        solver_inst = inst.with_lam(inst.lam * (1.0 + lambda_mismatch))
        err2 = max(err2, _rel(gd_solve_linear(solver_inst, "scaling").phi ** 2, closed_form_scaling(inst)))
        err3 = max(err3, _rel(gd_solve_linear(inst, "svd").phi ** 2, closed_form_svd(inst)))
        r = prop4_check(inst)
        target = inst.lam * inst.b + inst.eps
        err4 = max(err4, abs(r.risk_scaling - target), abs(r.risk_svd - target))
        hadamard = max(hadamard, float(np.sum(np.log(inst.s2)) - np.sum(np.log(inst.a2))))
    checks.append(Check("scaling closed form vs descent (rel)", err2, 1e-4))
    checks.append(Check("svd closed form vs descent (rel)", err3, 1e-4))
    checks.append(Check("closed-form risks equal lam*b + eps (abs)", err4, 1e-10))
    checks.append(Check("svd log-scale gain is non-negative", max(hadamard, 0.0), 0.0))

    st = RandomStream(seed, keys=(99,))
    X = st.normal((300, 2))
    X = np.column_stack([X[:, 0], X[:, 0] + 1e-2 * X[:, 1], st.normal(300)])
    dup = LinearInstance(X, X @ np.ones(3), lam=1.0)
    r = prop4_check(dup)
    checks.append(Check("correlated columns: svd gain exceeds 1 (1 - gain)", max(0.0, 1.0 - (r.H_svd - r.H_scaling)), 0.0))

    gap = 0.0
    for law in ("uniform", "normal"):
        for d_in, bias in ((1, False), (1, True), (3, False)):
            spec = NetworkSpec(d_in, hidden=(), head="linear", use_bias=bias)
            layout = WeightLayout.from_spec(spec)
            u = st.normal(layout.d)
            for kind in ("scaling", "svd"):
                bases = ()
                if kind == "svd":
                    Q, _ = np.linalg.qr(st.normal((d_in, d_in)))
                    bases = (Q,)
                dist = WeightDistribution(kind, np.zeros(layout.d), u, layout, bases, law)
                gap = max(gap, abs(entropy_affine_gap(dist)))
    checks.append(Check("exact entropy vs proxy affine map (abs)", gap, 1e-12))
    return checks
