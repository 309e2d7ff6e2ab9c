"""Closed-form Gaussian-exponential moments and solver theory constants.

All quantities here are deterministic functions of the signal norm r, the
dimension d and the sample count m.  Large arguments are handled through the
scaled complementary error function erfcx(t) = exp(t^2) * erfc(t), so products
of the form exp(c^2/2) * erfc(c / sqrt(2)) never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import erfc, erfcx

__all__ = [
    "erfc",
    "erfcx",
    "exp_pos_moment",
    "exp_plus_moment",
    "expected_loss_at_zero",
    "mu_bound",
    "lipschitz_bound",
    "condition_number",
    "TheoryConstants",
    "theory_constants",
    "gd_stepsize_schedule",
]

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def exp_pos_moment(c: float) -> float:
    """E[exp(-c X) 1{X >= 0}] for X standard normal.

    Equals (1/2) exp(c^2/2) erfc(c/sqrt(2)), evaluated as erfcx(c/sqrt(2))/2
    to stay finite for large c.
    """
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    return 0.5 * float(erfcx(c / math.sqrt(2.0)))


def exp_plus_moment(c: float) -> float:
    """E[exp(-c X) max(X, 0)] for X standard normal.

    Equals (1/2) (sqrt(2/pi) - c exp(c^2/2) erfc(c/sqrt(2))).
    """
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    return 0.5 * (_SQRT_2_OVER_PI - c * float(erfcx(c / math.sqrt(2.0))))


def expected_loss_at_zero(r: float) -> float:
    """Population value of the absolute-deviation loss at the origin.

    For measurements generated by a signal of norm r this is
    (1/2) (1 - exp(r^2/2) erfc(r/sqrt(2))); increases from 0 to 1/2 as r grows.
    """
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    return 0.5 * (1.0 - float(erfcx(r / math.sqrt(2.0))))


def mu_bound(r: float) -> float:
    """Sharpness modulus 1 / (4 sqrt(pi) (1 + 9 pi r^2))."""
    return 1.0 / (4.0 * math.sqrt(math.pi) * (1.0 + 9.0 * math.pi * r * r))


def lipschitz_bound(d: int, m: int) -> float:
    """Lipschitz modulus 1 + 2 sqrt(d/m) of the absolute-deviation loss."""
    return 1.0 + 2.0 * math.sqrt(d / m)


def condition_number(r: float) -> float:
    """Condition-number bound 8 sqrt(pi) (1 + 9 pi r^2)."""
    return 8.0 * math.sqrt(math.pi) * (1.0 + 9.0 * math.pi * r * r)


@dataclass(frozen=True)
class TheoryConstants:
    """Constants governing the two-phase linear convergence of the solver.

    ``rho_bar`` is the contraction factor during the initial phase (iterate
    still far from the signal), ``rho`` the faster factor once within half the
    signal norm, and ``t0`` bounds the number of iterations spent in the
    initial phase.
    """

    signal_norm: float
    dim: int
    samples: int
    mu: float
    lip: float
    kappa: float
    rho: float
    rho_bar: float
    t0: int
    eta: float

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0 and 0.0 < self.rho_bar < 1.0):
            raise ValueError("contraction factors must lie in (0, 1)")


def theory_constants(r: float, d: int, m: int, eta: float | None = None) -> TheoryConstants:
    """Assemble the constants (mu, L, kappa, rho, rho_bar, t0) for a problem.

    Requires r >= 1 and m >= d >= 1.  ``eta`` defaults to mu/L; a caller
    override rescales rho = eta (mu/L)^2 and rho_bar = rho / (40 sqrt(pi) r).
    """
    if r < 1.0:
        raise ValueError(f"signal norm must be >= 1, got {r}")
    if not (1 <= d <= m):
        raise ValueError(f"need m >= d >= 1, got d={d}, m={m}")
    mu = mu_bound(r)
    lip = lipschitz_bound(d, m)
    if eta is None:
        eta = mu / lip
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    rho = eta * (mu / lip) ** 2
    rho_bar = rho / (40.0 * math.sqrt(math.pi) * r)
    t0 = math.ceil(math.log(2.0) / rho_bar)
    return TheoryConstants(
        signal_norm=r,
        dim=d,
        samples=m,
        mu=mu,
        lip=lip,
        kappa=condition_number(r),
        rho=rho,
        rho_bar=rho_bar,
        t0=t0,
        eta=eta,
    )


def gd_stepsize_schedule(r: float, c0: float):
    """Stepsize schedule for the squared-loss gradient baseline.

    Step 0 takes the long step 4 exp(-r^2/2) / erfc(r/sqrt(2)), computed as
    4 / erfcx(r/sqrt(2)); later steps are the constant c0 exp(-5 r).
    """
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    if c0 <= 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    first = 4.0 / float(erfcx(r / math.sqrt(2.0)))
    later = c0 * math.exp(-5.0 * r)

    def schedule(k: int) -> float:
        return first if k == 0 else later

    return schedule
