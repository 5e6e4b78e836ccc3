"""Weight distributions: scaling and SVD parameterizations, clipping, mixtures.

A distribution is centered on frozen mean weights ``mean`` and spread by
``phi = softplus(u)``. A realized weight vector is ``mean + noise`` where

* scaling kind: ``noise = clip(phi * z)``;
* SVD kind: for every layer matrix, column ``j`` (the incoming weights of
  output neuron ``j``) receives ``basis @ clip(phi[:, j] * z[:, j])``, with
  ``basis`` the eigenvectors (as columns) of the second-moment matrix of
  that layer's input representation. Biases always use the scaling rule.

``clip`` is a symmetric elementwise clamp to ``[-C, C]`` applied to the
scaled latent ``phi * z`` before any basis product.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .network import NetworkSpec, WeightLayout, sigmoid, softplus
from .numerics import ContractError, RandomStream

KINDS = ("scaling", "svd")


@dataclass(frozen=True)
class WeightDistribution:
    kind: str
    mean: np.ndarray
    u: np.ndarray
    layout: WeightLayout
    bases: tuple = ()
    law: str = "uniform"
    clip: float = math.inf

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown parameterization {self.kind!r}")
        mean = np.asarray(self.mean, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        if mean.shape != (self.layout.d,) or u.shape != (self.layout.d,):
            raise ContractError("mean and u must both have length d")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "u", u)
        if self.clip < 0:
            raise ContractError("clip level must be non-negative")
        if self.kind == "svd":
            if len(self.bases) != self.layout.n_layers:
                raise ContractError("SVD kind needs one basis per layer")
            for V, (fan_in, _) in zip(self.bases, self.layout.shapes):
                if np.shape(V) != (fan_in, fan_in):
                    raise ContractError(f"basis shape {np.shape(V)} does not match fan-in {fan_in}")
            object.__setattr__(self, "bases", tuple(np.asarray(V, dtype=np.float64) for V in self.bases))

    @property
    def d(self) -> int:
        return self.layout.d

    @property
    def phi(self) -> np.ndarray:
        return softplus(self.u)

    def with_u(self, u) -> "WeightDistribution":
        return replace(self, u=np.asarray(u, dtype=np.float64))

    def with_clip(self, clip: float) -> "WeightDistribution":
        return replace(self, clip=float(clip))

    def stream(self, seed: int, *keys) -> RandomStream:
        return RandomStream(seed, self.law, keys)


def make_distribution(kind, mean, layout, *, u_init=None, bases=(), law="uniform", clip=math.inf):
    """Distribution around ``mean`` with constant raw scale ``u_init``.

    The default ``u_init`` is -5 for the scaling kind and -10 for SVD.
    """
    if u_init is None:
        u_init = -5.0 if kind == "scaling" else -10.0
    u = np.full(layout.d, float(u_init))
    return WeightDistribution(kind, mean, u, layout, tuple(bases), law, clip)


def _clamp(v, C):
    if math.isinf(C):
        return v
    return np.clip(v, -C, C)


def realize_weights(dist: WeightDistribution, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (dist.d,):
        raise ContractError(f"z has shape {z.shape}, expected ({dist.d},)")
    scaled = _clamp(dist.phi * z, dist.clip)
    if dist.kind == "scaling":
        return dist.mean + scaled
    noise = scaled.copy()
    for V, ws, shape in zip(dist.bases, dist.layout.weight_slices, dist.layout.shapes):
        noise[ws] = (V @ scaled[ws].reshape(shape)).ravel()
    return dist.mean + noise


def noise_vjp(dist: WeightDistribution, z, grad_w) -> np.ndarray:
    """Gradient with respect to ``u`` of a scalar whose weight-gradient is ``grad_w``.

    Chains through the basis product, the clamp (zero slope where clipped)
    and the softplus.
    """
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(grad_w, dtype=np.float64)
    if dist.kind == "svd":
        g = g.copy()
        for V, ws, shape in zip(dist.bases, dist.layout.weight_slices, dist.layout.shapes):
            g[ws] = (V.T @ g[ws].reshape(shape)).ravel()
    phi = dist.phi
    gz = g * z
    if not math.isinf(dist.clip):
        gz = np.where(np.abs(phi * z) < dist.clip, gz, 0.0)
    return gz * sigmoid(dist.u)


def entropy_proxy(dist: WeightDistribution) -> float:
    """Mean of ``log(phi_k ** 2)`` over all ``d`` scale parameters."""
    return float(2.0 * np.mean(np.log(dist.phi)))


def entropy_gradient(dist: WeightDistribution) -> np.ndarray:
    """Gradient of :func:`entropy_proxy` with respect to ``u``."""
    return (2.0 / dist.d) * sigmoid(dist.u) / dist.phi


@dataclass(frozen=True)
class EnsembleDistribution:
    """Uniform mixture of weight distributions sharing one layout."""

    members: tuple = field(default_factory=tuple)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ContractError("an ensemble needs at least one member")
        layout = members[0].layout
        if any(m.layout != layout for m in members):
            raise ContractError("ensemble members must share one weight layout")
        object.__setattr__(self, "members", members)

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def layout(self) -> WeightLayout:
        return self.members[0].layout

    def with_clip(self, clip: float) -> "EnsembleDistribution":
        return EnsembleDistribution(tuple(m.with_clip(clip) for m in self.members))


def ensemble_realize(ens: EnsembleDistribution, member_index: int, z) -> np.ndarray:
    if not 0 <= member_index < ens.m:
        raise IndexError(f"member index {member_index} out of range for {ens.m} members")
    return realize_weights(ens.members[member_index], z)


def ensemble_sample(ens: EnsembleDistribution, stream: RandomStream):
    """Draw a mixture component uniformly, then a weight vector from it."""
    j = int(stream.integers(ens.m))
    return j, ensemble_realize(ens, j, stream.sample_z(ens.layout.d))


# -- checkpoint serialization -------------------------------------------------

CHECKPOINT_VERSION = "maxwent-ckpt-v1"


def encode_matrix(M) -> dict:
    M = np.ascontiguousarray(M, dtype="<f8")
    return {"rows": M.shape[0], "cols": M.shape[1], "data": base64.b64encode(M.tobytes()).decode("ascii")}


def decode_matrix(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["rows"], obj["cols"]).copy()


def distribution_to_dict(dist: WeightDistribution, *, include_u: bool = True) -> dict:
    return {
        "kind": dist.kind,
        "law": dist.law,
        "clip": None if math.isinf(dist.clip) else dist.clip,
        "mean": dist.mean.tolist(),
        "u": dist.u.tolist() if include_u else None,
        "bases": [encode_matrix(V) for V in dist.bases],
    }


def distribution_from_dict(obj: dict, layout: WeightLayout) -> WeightDistribution:
    u = obj.get("u")
    u = np.full(layout.d, -np.inf) if u is None else np.asarray(u, dtype=np.float64)
    clip = math.inf if obj.get("clip") is None else float(obj["clip"])
    return WeightDistribution(
        obj["kind"],
        np.asarray(obj["mean"], dtype=np.float64),
        u,
        layout,
        tuple(decode_matrix(b) for b in obj.get("bases", [])),
        obj.get("law", "uniform"),
        clip,
    )


def layout_to_dict(layout: WeightLayout) -> dict:
    return {"d": layout.d, "shapes": [list(s) for s in layout.shapes], "bias": layout.bias_slices[0] is not None}


def checkpoint_dict(spec: NetworkSpec, members, *, method: str, extra: dict | None = None,
                    include_u: bool = True) -> dict:
    layout = WeightLayout.from_spec(spec)
    doc = {
        "version": CHECKPOINT_VERSION,
        "method": method,
        "spec": spec.to_dict(),
        "layout": layout_to_dict(layout),
        "members": [distribution_to_dict(m, include_u=include_u) for m in members],
    }
    doc.update(extra or {})
    return doc


def load_checkpoint_dict(doc: dict):
    """Return ``(spec, layout, members)`` from a parsed checkpoint document."""
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')!r}")
    spec = NetworkSpec.from_dict(doc["spec"])
    layout = WeightLayout.from_spec(spec)
    if doc["layout"]["d"] != layout.d:
        raise ContractError("checkpoint layout does not match its network spec")
    members = [distribution_from_dict(m, layout) for m in doc["members"]]
    return spec, layout, members
