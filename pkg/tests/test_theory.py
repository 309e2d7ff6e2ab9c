import math

import numpy as np
import pytest
from scipy.integrate import quad

from ctrecover import theory


# Quadrature oracles for the defining integrals.

def quad_erfc(t: float) -> float:
    # Substituting u = t + s keeps the integrand O(1), so the oracle retains
    # relative accuracy far into the tail.
    v, _ = quad(lambda s: math.exp(-2.0 * t * s - s * s), 0, np.inf, epsabs=1e-15, epsrel=1e-13)
    return 2.0 / math.sqrt(math.pi) * math.exp(-t * t) * v


def quad_exp_pos(c: float) -> float:
    v, _ = quad(
        lambda x: math.exp(-0.5 * x * x - c * x) / math.sqrt(2 * math.pi),
        0, np.inf, epsabs=1e-15, epsrel=1e-13,
    )
    return v


def quad_exp_plus(c: float) -> float:
    v, _ = quad(
        lambda x: x * math.exp(-0.5 * x * x - c * x) / math.sqrt(2 * math.pi),
        0, np.inf, epsabs=1e-15, epsrel=1e-13,
    )
    return v


class TestErfc:
    def test_at_zero(self):
        assert theory.erfc(0.0) == 1.0

    @pytest.mark.parametrize("t", [0.3, 1.7])
    def test_reflection(self, t):
        assert theory.erfc(t) == pytest.approx(2.0 - theory.erfc(-t), rel=1e-14)

    def test_against_quadrature(self):
        # frozen oracle value: quad_erfc(1/sqrt(2)) = 0.3173105078629142
        assert theory.erfc(1.0 / math.sqrt(2.0)) == pytest.approx(0.3173105078629142, rel=1e-12)
        for t in (0.0, 0.25, 1.0, 3.0, 6.0):
            assert theory.erfc(t) == pytest.approx(quad_erfc(t), rel=1e-12, abs=1e-300)


class TestExpPosMoment:
    def test_at_zero(self):
        assert theory.exp_pos_moment(0.0) == 0.5

    def test_spot_value(self):
        assert theory.exp_pos_moment(1.0) == pytest.approx(0.2615782918651234, rel=1e-12)

    def test_overflow_safe_large_argument(self):
        val = theory.exp_pos_moment(50.0)
        assert math.isfinite(val) and val > 0
        assert val == pytest.approx(0.007975657891993018, rel=1e-10)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            theory.exp_pos_moment(-0.1)


class TestExpPlusMoment:
    def test_at_zero(self):
        assert theory.exp_plus_moment(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-14)

    def test_spot_values(self):
        assert theory.exp_plus_moment(1.0) == pytest.approx(0.13736398853630932, rel=1e-10)
        assert theory.exp_plus_moment(10.0) == pytest.approx(0.003875339387572649, rel=1e-10)

    def test_quadrature_settles_the_sign_in_the_exponent(self):
        # The e^{+c^2/2} form matches the integral; the e^{-c^2/2} variant does not.
        c = 2.0
        oracle = quad_exp_plus(c)
        assert theory.exp_plus_moment(c) == pytest.approx(oracle, rel=1e-10)
        wrong = 0.5 * (
            math.sqrt(2 / math.pi)
            - c * math.exp(-c * c / 2) * theory.erfc(c / math.sqrt(2))
        )
        assert abs(wrong - oracle) > 1e-2


def test_moments_match_quadrature_on_grid():
    for c in np.linspace(0.0, 50.0, 101):
        pos, plus = theory.exp_pos_moment(c), theory.exp_plus_moment(c)
        assert abs(pos - quad_exp_pos(c)) <= 1e-10 * (1 + abs(pos))
        assert abs(plus - quad_exp_plus(c)) <= 1e-10 * (1 + abs(plus))


@pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
def test_monte_carlo_agreement(c):
    rng = np.random.Generator(np.random.Philox(key=[12345, int(c * 1000)]))
    x = rng.standard_normal(10**6)
    samples = np.exp(-c * x) * (x >= 0)
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - theory.exp_pos_moment(c)) <= 4 * se


class TestExpectedLossAtZero:
    def test_zero_signal(self):
        assert theory.expected_loss_at_zero(0.0) == 0.0

    def test_unit_signal_exceeds_corollary_bound(self):
        assert theory.expected_loss_at_zero(1.0) >= 0.235

    def test_limit(self):
        assert abs(theory.expected_loss_at_zero(1e6) - 0.5) < 1e-6

    def test_strictly_increasing(self):
        grid = np.linspace(0.0, 20.0, 400)
        vals = np.array([theory.expected_loss_at_zero(r) for r in grid])
        assert np.all(np.diff(vals) > 0)


def test_x_erfcx_nondecreasing():
    grid = np.linspace(0.0, 20.0, 400)
    vals = grid * theory.erfcx(grid)
    assert np.all(np.diff(vals) >= 0)


class TestTheoryConstants:
    def test_direct_formulas(self):
        tc = theory.theory_constants(1.0, 128, 512)
        assert tc.mu == pytest.approx(1.0 / (4 * math.sqrt(math.pi) * (1 + 9 * math.pi)), rel=1e-14)
        assert tc.lip == 2.0
        assert tc.kappa == pytest.approx(415.09924657912705, rel=1e-12)

    def test_r2_cross_checked_composition(self):
        # Frozen from an independent composition of the defining formulas.
        tc = theory.theory_constants(2.0, 128, 2048)
        assert tc.rho == pytest.approx(5.597510693498223e-10, rel=1e-12)
        assert tc.rho_bar == pytest.approx(tc.rho / (80 * math.sqrt(math.pi)), rel=1e-14)
        assert tc.t0 == 175588250807
        assert tc.t0 == math.ceil(math.log(2.0) / tc.rho_bar)

    def test_eta_override(self):
        tc = theory.theory_constants(1.0, 64, 512, eta=0.25)
        assert tc.rho == pytest.approx(0.25 * (tc.mu / tc.lip) ** 2, rel=1e-14)

    def test_rejects_small_signal(self):
        with pytest.raises(ValueError):
            theory.theory_constants(0.5, 32, 128)

    def test_rejects_undersampled(self):
        with pytest.raises(ValueError):
            theory.theory_constants(1.0, 128, 64)

    def test_kappa_dominates_lip_over_mu(self):
        # Holds whenever m >= 4d (so that 1 + 2 sqrt(d/m) <= 2).
        for r in (1.0, 2.0, 4.0, 8.0):
            for d, m in ((32, 128), (64, 512), (128, 4096)):
                tc = theory.theory_constants(r, d, m)
                assert tc.kappa >= tc.lip / tc.mu


class TestGdSchedule:
    def test_trivial_r_zero(self):
        sched = theory.gd_stepsize_schedule(0.0, 1.0)
        assert sched(0) == 4.0
        assert sched(1) == 1.0
        assert sched(100) == 1.0

    def test_r_one(self):
        sched = theory.gd_stepsize_schedule(1.0, 1.0)
        assert sched(1) == pytest.approx(math.exp(-5.0), rel=1e-14)
        assert sched(0) == pytest.approx(7.645894411724547, rel=1e-12)

    def test_overflow_safe(self):
        sched = theory.gd_stepsize_schedule(60.0, 1.0)
        assert math.isfinite(sched(0)) and sched(0) > 0
