"""Absolute-deviation and squared losses for the exponential forward model.

The nonsmooth loss is f(x) = (1/m) sum_i |y_i - h_i(x)| with
h_i(x) = 1 - exp(-<a_i, x>_+).  Its subgradient selection resolves the two
kinks deterministically: sign(0) = 0 for zero residuals, and the derivative
indicator of the positive part equals 1 at <a_i, x> = 0 exactly.  Only
floating-point exact zeros trigger these rules; there is no epsilon band.

Value and subgradient share a single pass over the residuals, so solvers can
obtain both at the cost of one forward and one adjoint product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import MeasurementSet, SensingEnsemble

__all__ = [
    "Objective",
    "l1_value",
    "l1_subgradient",
    "sq_value",
    "sq_gradient",
    "l1_value_many",
    "l1_subgradient_many",
    "subgradient_alignment",
]


@dataclass
class Objective:
    """Immutable view pairing an ensemble with a measurement vector."""

    ensemble: SensingEnsemble
    y: np.ndarray
    kind: str = "l1"

    def __post_init__(self):
        if self.kind not in ("l1", "squared"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != (self.ensemble.samples,):
            raise ValueError("measurement vector length does not match ensemble")

    @classmethod
    def from_measurements(cls, ensemble: SensingEnsemble, ms: MeasurementSet, kind: str = "l1"):
        return cls(ensemble=ensemble, y=ms.y, kind=kind)

    @property
    def m(self) -> int:
        return self.ensemble.samples

    def value(self, x: np.ndarray) -> float:
        return self.value_and_grad(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss value and a (sub)gradient from one residual pass."""
        z = self.ensemble.apply(np.asarray(x, dtype=float))
        active = z >= 0.0
        e = np.exp(-np.maximum(z, 0.0))
        r = self.y - (1.0 - e)
        if self.kind == "l1":
            value = float(np.mean(np.abs(r)))
            w = np.where(active, -np.sign(r) * e, 0.0)
        else:
            value = 0.5 * float(np.mean(r * r))
            w = np.where(active, -r * e, 0.0)
        g = self.ensemble.adjoint(w) / self.m
        return value, g


def l1_value(obj: Objective, x: np.ndarray) -> float:
    """Sample mean of absolute residuals, (1/m) sum_i |y_i - h_i(x)|."""
    z = obj.ensemble.apply(np.asarray(x, dtype=float))
    h = 1.0 - np.exp(-np.maximum(z, 0.0))
    return float(np.mean(np.abs(obj.y - h)))


def l1_subgradient(obj: Objective, x: np.ndarray) -> np.ndarray:
    """The deterministic Clarke subgradient selection of the absolute loss.

    v = -(1/m) sum_i sign(y_i - h_i(x)) exp(-<a_i,x>_+) a_i 1{<a_i,x> >= 0}.
    """
    z = obj.ensemble.apply(np.asarray(x, dtype=float))
    e = np.exp(-np.maximum(z, 0.0))
    r = obj.y - (1.0 - e)
    w = np.where(z >= 0.0, -np.sign(r) * e, 0.0)
    return obj.ensemble.adjoint(w) / obj.m


def sq_value(obj: Objective, x: np.ndarray) -> float:
    """(1/2m) sum_i (h_i(x) - y_i)^2."""
    z = obj.ensemble.apply(np.asarray(x, dtype=float))
    h = 1.0 - np.exp(-np.maximum(z, 0.0))
    return 0.5 * float(np.mean((h - obj.y) ** 2))


def sq_gradient(obj: Objective, x: np.ndarray) -> np.ndarray:
    """(1/m) sum_i (h_i(x) - y_i) exp(-<a_i,x>_+) a_i 1{<a_i,x> >= 0}."""
    z = obj.ensemble.apply(np.asarray(x, dtype=float))
    e = np.exp(-np.maximum(z, 0.0))
    r = obj.y - (1.0 - e)
    w = np.where(z >= 0.0, -r * e, 0.0)
    return obj.ensemble.adjoint(w) / obj.m


# -- vectorized evaluation over point batches (columns of X) ----------------


def _residual_weights(obj: Objective, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Z = obj.ensemble.apply(X)
    E = np.exp(-np.maximum(Z, 0.0))
    R = obj.y[:, None] - (1.0 - E)
    W = np.where(Z >= 0.0, -np.sign(R) * E, 0.0)
    return R, W

def l1_value_many(obj: Objective, X: np.ndarray) -> np.ndarray:
    """Loss values at each column of X (shape (d, b) -> (b,))."""
    R, _ = _residual_weights(obj, X)
    return np.mean(np.abs(R), axis=0)


def l1_subgradient_many(obj: Objective, X: np.ndarray) -> np.ndarray:
    """Subgradient selections at each column of X, stacked as columns."""
    _, W = _residual_weights(obj, X)
    return obj.ensemble.adjoint(W) / obj.m


def subgradient_alignment(obj: Objective, X: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """<v_b, x_b - ref> for each column x_b of X, without forming the v_b.

    Uses <v, x - ref> = (1/m) (<w, Ax> - <w, A ref>) with the same residual
    weights w as the subgradient, so only forward products of the ensemble
    are needed.  In-place arithmetic keeps the working set to two m-by-b
    blocks, which matters for the large Monte-Carlo sweeps.
    """
    Z = obj.ensemble.apply(X)
    z_ref = obj.ensemble.apply(np.asarray(ref, dtype=float))
    active = Z >= 0.0
    E = np.maximum(Z, 0.0)
    np.negative(E, out=E)
    np.exp(E, out=E)  # E = exp(-(Z)_+)
    S = E + (obj.y - 1.0)[:, None]  # residuals y - h
    np.sign(S, out=S)
    S *= E  # sign(r) * exp(-(z)_+)
    S *= active
    # w = -S; <w, z - z_ref> summed per column.
    out = np.einsum("ib,ib->b", S, Z)
    out -= S.T @ z_ref
    return -out / obj.m
