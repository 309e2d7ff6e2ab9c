"""Isotropic total-variation machinery and projection onto the TV-norm ball.

Images are vectors of length n^2; ``mat`` reshapes them so that consecutive
n-blocks become columns.  The discrete gradient maps R^{n^2} -> R^{2n^2}: the
first n^2 slots hold vertical differences M[i+1,j] - M[i,j], the last n^2
horizontal differences M[i,j+1] - M[i,j], each stored at slot i*n + j, with
the out-of-range differences (last row / last column) fixed to zero.  The TV
norm is the sum over pixels of the Euclidean norm of the (vertical,
horizontal) difference pair.

The ball projection {x : tv_norm(x) <= lam} is computed by Douglas-Rachford
splitting in the lifted space (x, z): one prox averages with the anchor and
projects z onto the group-norm ball, the other projects onto the graph
{z = Jx} through a cached sparse factorization of I + J^T J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "mat",
    "vec",
    "side_of",
    "jtv_apply",
    "jtv_adjoint",
    "jtv_matrix",
    "tv_norm",
    "group_norm",
    "group_prox",
    "group_ball_project",
    "graph_project",
    "tv_ball_project",
    "DrState",
    "TvProjectionError",
    "GraphSolveError",
]


class TvProjectionError(RuntimeError):
    """Douglas-Rachford loop failed to reach the requested residual."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(f"projection not converged after {sweeps} sweeps (residual {residual:.3e})")
        self.residual = residual
        self.sweeps = sweeps


class GraphSolveError(RuntimeError):
    """Linear solve inside the graph projection did not meet its tolerance."""


def side_of(x: np.ndarray) -> int:
    n = math.isqrt(x.shape[0])
    if n * n != x.shape[0]:
        raise ValueError(f"vector length {x.shape[0]} is not a perfect square")
    return n


def mat(x: np.ndarray, n: int | None = None) -> np.ndarray:
    """Reshape a length-n^2 vector to n x n, consecutive n-blocks as columns."""
    x = np.asarray(x, dtype=float)
    n = side_of(x) if n is None else n
    return x.reshape((n, n), order="F")


def vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M, dtype=float).ravel(order="F")


def jtv_apply(x: np.ndarray) -> np.ndarray:
    """Discrete gradient: stacked (vertical, horizontal) forward differences."""
    n = side_of(x)
    M = mat(x, n)
    V = np.zeros((n, n))
    V[:-1, :] = M[1:, :] - M[:-1, :]
    H = np.zeros((n, n))
    H[:, :-1] = M[:, 1:] - M[:, :-1]
    return np.concatenate([V.ravel(), H.ravel()])


def jtv_adjoint(z: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`jtv_apply`; boundary slots of z are ignored."""
    k = z.shape[0] // 2
    if 2 * k != z.shape[0]:
        raise ValueError("gradient field length must be even")
    n = math.isqrt(k)
    if n * n != k:
        raise ValueError(f"gradient field length {z.shape[0]} is not 2 * n^2")
    V = z[:k].reshape(n, n)
    H = z[k:].reshape(n, n)
    out = np.zeros((n, n))
    out[1:, :] += V[:-1, :]
    out[:-1, :] -= V[:-1, :]
    out[:, 1:] += H[:, :-1]
    out[:, :-1] -= H[:, :-1]
    return vec(out)


def group_norm(z: np.ndarray) -> float:
    """Sum over pixels of the Euclidean norm of the difference pair."""
    k = z.shape[0] // 2
    return float(np.sum(np.hypot(z[:k], z[k:])))


def tv_norm(x: np.ndarray) -> float:
    """Isotropic total variation; equals group_norm(jtv_apply(x))."""
    return group_norm(jtv_apply(x))


def group_prox(z: np.ndarray, mu: float) -> np.ndarray:
    """Row-wise shrinkage: each pair scaled by (1 - mu / max(||pair||, mu))."""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    if mu == 0.0:
        return np.array(z, dtype=float)
    k = z.shape[0] // 2
    norms = np.hypot(z[:k], z[k:])
    scale = 1.0 - mu / np.maximum(norms, mu)
    return np.concatenate([z[:k] * scale, z[k:] * scale])


def _shrinkage_root(norms: np.ndarray, lam: float) -> float:
    """Root mu of sum_i [norms_i - mu]_+ = lam, assuming sum(norms) > lam.

    Sort-and-scan over the breakpoints; a bisection pass tightens the result
    if floating-point plateaus leave a residual.
    """
    s = np.sort(norms)[::-1]
    css = np.cumsum(s)
    ks = np.arange(1, len(s) + 1)
    candidates = (css - lam) / ks
    active = s > candidates
    rho = int(np.nonzero(active)[0].max()) + 1
    mu = (css[rho - 1] - lam) / rho
    # Fallback: refine by bisection when ties make the scan land off the root.
    if abs(np.sum(np.maximum(norms - mu, 0.0)) - lam) > 1e-12 * max(lam, 1.0):
        lo, hi = 0.0, float(s[0])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.sum(np.maximum(norms - mid, 0.0)) > lam:
                lo = mid
            else:
                hi = mid
        mu = 0.5 * (lo + hi)
    return float(mu)


def group_ball_project(z: np.ndarray, lam: float) -> np.ndarray:
    """Euclidean projection onto {z : group_norm(z) <= lam}."""
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    z = np.asarray(z, dtype=float)
    k = z.shape[0] // 2
    norms = np.hypot(z[:k], z[k:])
    if norms.sum() <= lam:
        return z.copy()
    mu = _shrinkage_root(norms, lam)
    return group_prox(z, mu)


_JTV_CACHE: dict[int, sp.csr_matrix] = {}
_FACTOR_CACHE: dict[int, spla.SuperLU] = {}


def jtv_matrix(n: int) -> sp.csr_matrix:
    """Sparse 2n^2 x n^2 matrix of the discrete gradient (cached per n)."""
    if n not in _JTV_CACHE:
        ii, jj = np.meshgrid(np.arange(n - 1), np.arange(n), indexing="ij")
        slot_v = (ii * n + jj).ravel()
        col_hi = (jj * n + ii + 1).ravel()
        col_lo = (jj * n + ii).ravel()
        ii, jj = np.meshgrid(np.arange(n), np.arange(n - 1), indexing="ij")
        slot_h = (n * n + ii * n + jj).ravel()
        col_right = ((jj + 1) * n + ii).ravel()
        col_here = (jj * n + ii).ravel()
        rows = np.concatenate([slot_v, slot_v, slot_h, slot_h])
        cols = np.concatenate([col_hi, col_lo, col_right, col_here])
        vals = np.concatenate(
            [np.ones_like(col_hi, dtype=float), -np.ones_like(col_lo, dtype=float),
             np.ones_like(col_right, dtype=float), -np.ones_like(col_here, dtype=float)]
        )
        _JTV_CACHE[n] = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n * n, n * n))
    return _JTV_CACHE[n]


def _graph_factor(n: int) -> spla.SuperLU:
    if n not in _FACTOR_CACHE:
        J = jtv_matrix(n)
        M = (sp.identity(n * n, format="csc") + (J.T @ J).tocsc()).tocsc()
        _FACTOR_CACHE[n] = spla.splu(M)
    return _FACTOR_CACHE[n]


def graph_project(
    x_in: np.ndarray,
    z_in: np.ndarray,
    solver_tol: float = 1e-10,
    method: str = "auto",
    check_residual: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Projection onto the graph {(x, z) : z = Jx}.

    Solves (I + J^T J) x = x_in + J^T z_in and returns (x, Jx).  ``method``
    is "factor" (cached sparse LU), "cg" (matrix-free conjugate gradient) or
    "auto" (factor up to n = 256, CG beyond).
    """
    if solver_tol <= 0:
        raise ValueError("solver_tol must be positive")
    n = side_of(x_in)
    rhs = np.asarray(x_in, dtype=float) + jtv_adjoint(np.asarray(z_in, dtype=float))
    if method == "auto":
        method = "factor" if n <= 256 else "cg"
    if method == "factor":
        x = _graph_factor(n).solve(rhs)
    elif method == "cg":
        op = spla.LinearOperator(
            (n * n, n * n), matvec=lambda u: u + jtv_adjoint(jtv_apply(u))
        )
        x, info = spla.cg(op, rhs, rtol=solver_tol, atol=0.0, maxiter=20 * n * n)
        if info != 0:
            raise GraphSolveError(f"CG did not converge within iteration cap (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    if check_residual:
        residual = np.linalg.norm(x + jtv_adjoint(jtv_apply(x)) - rhs)
        if residual > solver_tol * max(np.linalg.norm(rhs), 1e-300):
            raise GraphSolveError(f"normal-equation residual {residual:.3e} above tolerance")
    return x, jtv_apply(x)


@dataclass
class DrState:
    """Splitting-loop state: primal pair (x, z) and auxiliary pair (x_bar, z_bar)."""

    x: np.ndarray
    z: np.ndarray
    x_bar: np.ndarray
    z_bar: np.ndarray
    iteration: int = 0
    residual: float = math.inf
    residual_history: list[float] = field(default_factory=list)


def tv_ball_project(
    y: np.ndarray,
    lam: float,
    tol: float = 1e-8,
    max_sweeps: int = 5000,
    state: DrState | None = None,
    return_state: bool = False,
    feas_rtol: float = 1e-6,
    strict: bool = True,
):
    """Euclidean projection of y onto {x : tv_norm(x) <= lam}.

    Runs Douglas-Rachford sweeps until the auxiliary pair moves by at most
    ``tol`` (max of the two Euclidean norms) and the returned point satisfies
    tv_norm(x) <= lam * (1 + feas_rtol); raises :class:`TvProjectionError`
    otherwise.  A previous :class:`DrState` may be passed to warm-start the
    loop, e.g. across the iterations of a projected solver; with
    ``strict=False`` the sweep cap returns the current graph point instead of
    raising, which together with a warm state gives a cheap inexact projection
    for use inside solver loops.
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    y = np.asarray(y, dtype=float)
    if tv_norm(y) <= lam:
        out = y.copy()
        if return_state:
            fresh = DrState(x=out, z=jtv_apply(out), x_bar=y.copy(), z_bar=jtv_apply(y), residual=0.0)
            return out, fresh
        return out
    if state is None:
        x_bar = y.copy()
        z_bar = jtv_apply(y)
        iteration = 0
    else:
        x_bar = state.x_bar.copy()
        z_bar = state.z_bar.copy()
        iteration = state.iteration
    history: list[float] = []  # per-call residuals
    x_g = y
    z_g = jtv_apply(y)
    residual = math.inf
    for _ in range(max_sweeps):
        x_p = 0.5 * (x_bar + y)
        z_p = group_ball_project(z_bar, lam)
        x_g, z_g = graph_project(2.0 * x_p - x_bar, 2.0 * z_p - z_bar, check_residual=False)
        x_bar_next = x_bar + x_g - x_p
        z_bar_next = z_bar + z_g - z_p
        residual = max(
            float(np.linalg.norm(x_bar_next - x_bar)),
            float(np.linalg.norm(z_bar_next - z_bar)),
        )
        x_bar, z_bar = x_bar_next, z_bar_next
        iteration += 1
        history.append(residual)
        if residual <= tol and group_norm(z_g) <= lam * (1.0 + feas_rtol):
            break
    else:
        if strict:
            raise TvProjectionError(residual, iteration)
    if return_state:
        return x_g, DrState(
            x=x_g, z=z_g, x_bar=x_bar, z_bar=z_bar,
            iteration=iteration, residual=residual, residual_history=history,
        )
    return x_g
