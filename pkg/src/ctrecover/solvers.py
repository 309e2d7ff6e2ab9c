"""Iterative methods: Polyak-stepsize subgradient solvers and the gradient baseline.

All solvers trace per-iteration statistics.  Traced loss values are exactly
the values used to form the steps; nothing is recomputed for the trace.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .losses import Objective

__all__ = [
    "SolveOptions",
    "SolveTrace",
    "NumericalError",
    "KappaCapExceeded",
    "polyak_sgm",
    "ad_polyak_sgm",
    "polyak_sgm_noopt",
    "gradient_descent",
]

BUDGET_EXHAUSTED = "budget-exhausted"
TOLERANCE_MET = "tolerance-met"
ZERO_SUBGRADIENT = "zero-subgradient-at-nonoptimal"
CONVERGED_EXACT = "converged-exact"


class NumericalError(RuntimeError):
    """Non-finite loss or iterate encountered; carries the iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class KappaCapExceeded(RuntimeError):
    """Adaptive conditioning estimate grew past the configured cap."""


@dataclass
class SolveOptions:
    """Options shared by the Polyak-type solvers.

    ``dist_tol`` / ``f_tol`` enable optional early stopping on the distance to
    the known signal or on the loss value; both default to off so budgeted
    runs consume their full budget.  ``projection`` is applied after every
    step when provided.
    """

    eta: float = 1.0
    max_iters: int = 1000
    f_star: float = 0.0
    dist_tol: float | None = None
    f_tol: float | None = None
    projection: Callable[[np.ndarray], np.ndarray] | None = None
    trace_every: int = 1

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")


class SolveTrace:
    """Per-iteration record: k, f(x_k), ||v_k||, step length, distance to truth."""

    def __init__(self):
        self.k: list[int] = []
        self.f: list[float] = []
        self.grad_norm: list[float] = []
        self.step: list[float] = []
        self.dist: list[float] = []
        self.status: str = BUDGET_EXHAUSTED
        self.evals: int = 0
        self.wall_time: float = 0.0

    def record(self, k, f, grad_norm, step, dist):
        self.k.append(int(k))
        self.f.append(float(f))
        self.grad_norm.append(float(grad_norm))
        self.step.append(float(step))
        self.dist.append(math.nan if dist is None else float(dist))

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "k": np.asarray(self.k, dtype=int),
            "f": np.asarray(self.f),
            "grad_norm": np.asarray(self.grad_norm),
            "step": np.asarray(self.step),
            "dist": np.asarray(self.dist),
        }

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "f", "grad_norm", "step", "dist"])
            for row in zip(self.k, self.f, self.grad_norm, self.step, self.dist):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def summary(self) -> dict:
        return {"status": self.status, "evals": self.evals, "wall_time": self.wall_time}

    def to_json(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _distance(x: np.ndarray, truth: np.ndarray | None) -> float | None:
    if truth is None:
        return None
    return float(np.linalg.norm(x - truth))


def polyak_sgm(
    obj: Objective,
    x0: np.ndarray,
    opts: SolveOptions,
    truth: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveTrace]:
    """Subgradient method with scaled Polyak stepsize.

    Iterates x_{k+1} = P(x_k - eta (f(x_k) - f_star) / ||v_k||^2 v_k) for the
    subgradient selection v_k, where P is the optional projection.  Stops with
    status ``converged-exact`` when f(x_k) = f_star exactly and with
    ``zero-subgradient-at-nonoptimal`` when v_k = 0 while f(x_k) > f_star.
    """
    start = time.perf_counter()
    x = np.array(x0, dtype=float)
    trace = SolveTrace()
    for k in range(opts.max_iters):
        f, v = obj.value_and_grad(x)
        trace.evals += 1
        if not math.isfinite(f):
            raise NumericalError("non-finite loss value", k)
        gap = f - opts.f_star
        vnorm = float(np.linalg.norm(v))
        dist_here = _distance(x, truth)
        if gap == 0.0:
            trace.record(k, f, vnorm, 0.0, dist_here)
            trace.status = CONVERGED_EXACT
            break
        if vnorm == 0.0:
            trace.record(k, f, vnorm, 0.0, dist_here)
            trace.status = ZERO_SUBGRADIENT
            break
        step = opts.eta * gap / vnorm
        x = x - (step / vnorm) * v
        if opts.projection is not None:
            x = opts.projection(x)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite iterate", k)
        dist_next = _distance(x, truth)
        stop = (opts.f_tol is not None and f <= opts.f_tol) or (
            opts.dist_tol is not None and dist_next is not None and dist_next <= opts.dist_tol
        )
        if stop or k % opts.trace_every == 0 or k == opts.max_iters - 1:
            trace.record(k, f, vnorm, step, dist_here)
        if stop:
            trace.status = TOLERANCE_MET
            break
    trace.wall_time = time.perf_counter() - start
    return x, trace


def ad_polyak_sgm(
    obj: Objective,
    x0: np.ndarray,
    eps: float,
    truth: np.ndarray | None = None,
    kappa_cap: float = 2.0**20,
    warm_start: bool = False,
) -> tuple[np.ndarray, int, SolveTrace]:
    """Adaptive restarting scheme for an unknown condition number.

    Runs rounds of :func:`polyak_sgm` with scaling 1/kappa_hat and budget
    T_i = ceil(7 kappa_hat^{7/2}) + ceil(2 kappa_hat^3 log(kappa_hat / eps)),
    doubling kappa_hat after each round, until f(x_i) <= eps * f(x0).  Every
    round restarts from x0 unless ``warm_start`` is set.  Returns the winning
    round's iterate, the cumulative subgradient evaluation count, and the
    winning round's trace.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    x0 = np.asarray(x0, dtype=float)
    f0 = obj.value(x0)
    if f0 <= 0.0:
        raise ValueError("f(x0) must be positive; the instance is already solved")
    kappa_hat = 1.0
    total_evals = 0
    start_point = x0
    while True:
        if kappa_hat > kappa_cap:
            raise KappaCapExceeded(
                f"conditioning estimate {kappa_hat:g} exceeds cap {kappa_cap:g}"
            )
        budget = math.ceil(7.0 * kappa_hat**3.5) + math.ceil(
            2.0 * kappa_hat**3 * math.log(kappa_hat / eps)
        )
        opts = SolveOptions(eta=1.0 / kappa_hat, max_iters=budget, f_star=0.0)
        x, trace = polyak_sgm(obj, start_point, opts, truth=truth)
        total_evals += trace.evals
        if obj.value(x) <= eps * f0:
            trace.evals = total_evals
            return x, total_evals, trace
        kappa_hat *= 2.0
        if warm_start:
            start_point = x


def polyak_sgm_noopt(
    obj: Objective,
    x0: np.ndarray,
    f_lb: float,
    eta: float,
    t_inner: int,
    t_outer: int,
    truth: np.ndarray | None = None,
    warm_start: bool = False,
) -> tuple[np.ndarray, SolveTrace]:
    """Polyak-type method for an unknown optimal value, given a lower bound.

    Each outer round t runs :func:`polyak_sgm` from x0 with scaling eta/2 and
    the running optimum estimate, then updates the estimate to the average of
    the round's final loss and the previous estimate.  Returns the best-loss
    iterate across rounds.  The returned trace concatenates the rounds, with
    ``k`` counting cumulative subgradient evaluations.
    """
    if t_inner < 1 or t_outer < 1:
        raise ValueError("t_inner and t_outer must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    f_est = float(f_lb)
    merged = SolveTrace()
    best_x = None
    best_f = math.inf
    start_point = x0
    offset = 0
    start = time.perf_counter()
    for _ in range(t_outer):
        opts = SolveOptions(eta=eta / 2.0, max_iters=t_inner, f_star=f_est)
        x_hat, trace = polyak_sgm(obj, start_point, opts, truth=truth)
        for k, f, gn, st, di in zip(trace.k, trace.f, trace.grad_norm, trace.step, trace.dist):
            merged.record(offset + k, f, gn, st, di)
        merged.evals += trace.evals
        offset += trace.evals
        f_hat = obj.value(x_hat)
        if f_hat < best_f:
            best_f = f_hat
            best_x = x_hat
        f_est = 0.5 * (f_hat + f_est)
        if warm_start:
            start_point = x_hat
    merged.status = BUDGET_EXHAUSTED
    merged.wall_time = time.perf_counter() - start
    return best_x, merged


def gradient_descent(
    obj: Objective,
    x0: np.ndarray,
    schedule: Callable[[int], float],
    max_iters: int,
    projection: Callable[[np.ndarray], np.ndarray] | None = None,
    truth: np.ndarray | None = None,
    dist_tol: float | None = None,
    trace_every: int = 1,
) -> tuple[np.ndarray, SolveTrace]:
    """Gradient descent x_{k+1} = P(x_k - eta_k grad(x_k)) on the squared loss."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    start = time.perf_counter()
    x = np.array(x0, dtype=float)
    trace = SolveTrace()
    for k in range(max_iters):
        f, g = obj.value_and_grad(x)
        trace.evals += 1
        if not math.isfinite(f):
            raise NumericalError("non-finite loss value", k)
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            trace.record(k, f, gnorm, 0.0, _distance(x, truth))
            trace.status = CONVERGED_EXACT
            break
        eta_k = schedule(k)
        if not (math.isfinite(eta_k) and eta_k > 0.0):
            raise ValueError(f"schedule produced invalid stepsize {eta_k!r} at k={k}")
        dist_here = _distance(x, truth)
        x = x - eta_k * g
        if projection is not None:
            x = projection(x)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite iterate", k)
        dist_next = _distance(x, truth)
        stop = dist_tol is not None and dist_next is not None and dist_next <= dist_tol
        if stop or k % trace_every == 0 or k == max_iters - 1:
            trace.record(k, f, gnorm, eta_k * gnorm, dist_here)
        if stop:
            trace.status = TOLERANCE_MET
            break
    trace.wall_time = time.perf_counter() - start
    return x, trace
