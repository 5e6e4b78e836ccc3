"""Dense symmetric eigendecomposition, PCA scores and seeded sampling."""

from __future__ import annotations

import math

import numpy as np

SQRT3 = math.sqrt(3.0)

LAWS = ("normal", "uniform")


class ContractError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class NumericalError(FloatingPointError):
    """Raised when a computation produces non-finite values."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class RandomStream:
    """Reproducible stream of standardized draws.

    Backed by the Philox-4x64 counter-based bit generator, whose output
    sequence for a given key is fixed across platforms. ``law`` selects the
    distribution returned by :meth:`sample_z`: ``"normal"`` for N(0, 1) or
    ``"uniform"`` for U[-sqrt(3), sqrt(3)]. Both have mean 0 and variance 1.

    Child streams are keyed by ``(seed, *keys)`` through ``SeedSequence`` so
    that independent consumers never share state.
    """

    def __init__(self, seed: int, law: str = "uniform", keys: tuple = ()):
        if law not in LAWS:
            raise ContractError(f"unknown sampling law {law!r}")
        self.seed = int(seed)
        self.law = law
        self.keys = tuple(int(k) for k in keys)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *self.keys]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *keys: int, law: str | None = None) -> "RandomStream":
        return RandomStream(self.seed, law or self.law, self.keys + tuple(keys))

    def sample_z(self, d: int) -> np.ndarray:
        """Draw ``d`` independent zero-mean, unit-variance values."""
        if d < 0:
            raise ContractError("d must be non-negative")
        if self.law == "normal":
            return self._gen.standard_normal(d)
        return SQRT3 * (2.0 * self._gen.random(d) - 1.0)

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low, high, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_z(stream: RandomStream, d: int) -> np.ndarray:
    return stream.sample_z(d)


def _round_robin(n: int):
    """Rounds of disjoint index pairs ``(p, q)`` covering every pair of ``range(n)``."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        if ps:
            rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def sym_eigendecomposition(M, *, tol: float = 1e-10, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric positive semi-definite matrix.

    Cyclic Jacobi rotations in round-robin order: each round annihilates
    ``n // 2`` disjoint off-diagonal pairs at once, so one sweep costs
    ``n - 1`` vectorized updates.

    Returns ``(V, eigenvalues)`` with ``M = V @ diag(eigenvalues) @ V.T``,
    eigenvalues sorted in descending order and eigenvectors stored as the
    columns of ``V``. Slightly negative eigenvalues produced by round-off
    are clamped to zero; ``tol`` (relative to the largest entry of ``M``)
    bounds both the asymmetry and the negativity that are tolerated.
    """
    A = np.array(M, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractError("matrix has non-finite entries")
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros(0)
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise ContractError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    Vt = np.eye(n)  # eigenvectors as rows while iterating
    fro = np.linalg.norm(A)
    eps = np.finfo(np.float64).eps
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= max(n, 1) * eps * fro:
            break
        rotated = False
        for p, q in rounds:
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            # entries at round-off level relative to their diagonal are left alone
            active = (np.abs(apq) > eps * np.sqrt(np.abs(app * aqq))) & (np.abs(apq) > 1e-4 * eps * fro)
            if not active.any():
                continue
            rotated = True
            theta = (aqq - app) / (2.0 * np.where(active, apq, 1.0))
            big = np.abs(theta) > 1e150
            th = np.where(big, 1.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0)))
            t = np.where(active, np.where(theta == 0.0, 1.0, t), 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cc, sc = c[:, None], s[:, None]
            # rows of J^T A
            Ap, Aq = A[p], A[q]
            Bp = cc * Ap - sc * Aq
            Bq = sc * Ap + cc * Aq
            # right-multiply the pair rows by J; other rows follow from symmetry
            for B in (Bp, Bq):
                bp, bq = B[:, p], B[:, q]
                B[:, p] = c * bp - s * bq
                B[:, q] = s * bp + c * bq
            A[p] = Bp
            A[q] = Bq
            A[:, p] = Bp.T
            A[:, q] = Bq.T
            Vp, Vq = Vt[p], Vt[q]
            Vt[p] = cc * Vp - sc * Vq
            Vt[q] = sc * Vp + cc * Vq
        if not rotated:
            break
    eig = np.diag(A).copy()
    if eig.min() < -tol * scale:
        raise ContractError(f"matrix is not positive semi-definite (eigenvalue {eig.min():.3e})")
    eig = np.maximum(eig, 0.0)
    idx = np.argsort(-eig, kind="stable")
    return Vt[idx].T.copy(), eig[idx]


def pca_first_scores(X) -> np.ndarray:
    """Projection of each centered row of ``X`` on the top principal axis.

    The axis sign is fixed so that its largest-magnitude component is
    positive. Data with zero variance yields all-zero scores.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ContractError("need at least two rows")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / X.shape[0]
    V, eig = sym_eigendecomposition(cov)
    if eig[0] <= 0.0:
        return np.zeros(X.shape[0])
    v = V[:, 0]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return Xc @ v
