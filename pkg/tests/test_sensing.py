import math

import numpy as np
import pytest

from ctrecover import sensing, theory


def dense_hadamard(d: int) -> np.ndarray:
    """Sylvester recursion oracle, independent of the butterfly transform."""
    H = np.array([[1.0]])
    while H.shape[0] < d:
        H = np.block([[H, H], [H, -H]])
    return H


class TestFwht:
    def test_first_column(self):
        assert np.array_equal(sensing.fwht(np.array([1.0, 0.0])), np.array([1.0, 1.0]))

    def test_involution_up_to_scale(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4)
        assert np.allclose(sensing.fwht(sensing.fwht(x)), 4.0 * x, atol=1e-14)

    @pytest.mark.parametrize("d", [2, 4, 8, 16])
    def test_matches_dense_oracle(self, d):
        rng = np.random.default_rng(d)
        H = dense_hadamard(d)
        for _ in range(5):
            x = rng.standard_normal(d)
            assert np.allclose(sensing.fwht(x), H @ x, atol=1e-12)

    def test_batched_columns(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((8, 3))
        H = dense_hadamard(8)
        assert np.allclose(sensing.fwht(X), H @ X, atol=1e-12)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            sensing.fwht(np.zeros(3))


class TestGaussianEnsemble:
    def test_deterministic(self):
        a = sensing.gaussian_ensemble(2, 3, 7)
        b = sensing.gaussian_ensemble(2, 3, 7)
        assert np.array_equal(a.matrix, b.matrix)

    def test_column_variance(self):
        ens = sensing.gaussian_ensemble(64, 4096, 1)
        var = ens.matrix.var(axis=0)
        assert np.all((0.9 <= var) & (var <= 1.1))

    def test_spectral_norm_event(self):
        ens = sensing.gaussian_ensemble(64, 4096, 1)
        top = np.linalg.norm(ens.matrix, 2)
        assert top / math.sqrt(4096) <= 1 + 2 * math.sqrt(64 / 4096) + 0.1

    def test_row_norm_concentration(self):
        ens = sensing.gaussian_ensemble(64, 500, 3)
        norms = np.linalg.norm(ens.matrix, axis=1)
        assert np.all((math.sqrt(64) - 4 <= norms) & (norms <= math.sqrt(64) + 4))


class TestRwhtEnsemble:
    def test_d_equals_one(self):
        ens = sensing.rwht_ensemble(1, 1, 5)
        assert ens.row(0)[0] in (-1.0, 1.0)

    def test_matches_dense_blocks(self):
        ens = sensing.rwht_ensemble(8, 2, 3)
        H = dense_hadamard(8)
        dense = np.vstack([H @ np.diag(ens.signs[j]) for j in range(2)])
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.standard_normal(8)
            assert np.allclose(ens.apply(x), dense @ x, atol=1e-12)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            sensing.rwht_ensemble(3, 1, 0)

    def test_rows_are_signs_with_exact_norm(self):
        ens = sensing.rwht_ensemble(16, 2, 9)
        for i in (0, 7, 16, 31):
            row = ens.row(i)
            assert np.all(np.abs(row) == 1.0)
            assert row @ row == 16.0


@pytest.mark.parametrize("make", [
    lambda: sensing.gaussian_ensemble(24, 96, 11),
    lambda: sensing.rwht_ensemble(16, 4, 11),
    lambda: sensing.explicit_ensemble(np.random.default_rng(4).standard_normal((20, 8))),
])
def test_adjoint_consistency(make):
    ens = make()
    rng = np.random.default_rng(17)
    for _ in range(100):
        x = rng.standard_normal(ens.dim)
        u = rng.standard_normal(ens.samples)
        lhs = ens.apply(x) @ u
        rhs = x @ ens.adjoint(u)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(u) * math.sqrt(ens.dim)


class TestForwardModel:
    def test_zero_signal(self):
        ens = sensing.gaussian_ensemble(4, 6, 0)
        assert np.array_equal(sensing.forward_model(ens, np.zeros(4)), np.zeros(6))

    def test_negative_correlation_clamps(self):
        ens = sensing.explicit_ensemble(np.array([[1.0, 0.0]]))
        h = sensing.forward_model(ens, np.array([-5.0, 0.0]))
        assert h[0] == 0.0

    def test_hand_value(self):
        ens = sensing.explicit_ensemble(np.array([[1.0, 1.0]]))
        h = sensing.forward_model(ens, np.array([math.log(2.0), 0.0]))
        assert h[0] == pytest.approx(0.5, rel=1e-15)

    def test_range_and_monotonicity(self):
        ens = sensing.gaussian_ensemble(8, 64, 2)
        x = np.abs(sensing.sample_signal(8, 2.0, 3))
        h1 = sensing.forward_model(ens, x)
        assert np.all((0 <= h1) & (h1 < 1))
        pos = ens.apply(x) >= 0
        h2 = sensing.forward_model(ens, 1.5 * x)
        assert np.all(h2[pos] >= h1[pos])

    def test_dimension_mismatch(self):
        ens = sensing.gaussian_ensemble(4, 6, 0)
        with pytest.raises(ValueError):
            sensing.forward_model(ens, np.zeros(5))


class TestMeasurements:
    def test_zero_truth_clean(self):
        ens = sensing.gaussian_ensemble(4, 10, 1)
        ms = sensing.generate_measurements(ens, np.zeros(4))
        assert np.array_equal(ms.y, np.zeros(10))

    def test_clean_range(self):
        ens = sensing.gaussian_ensemble(16, 128, 5)
        ms = sensing.generate_measurements(ens, sensing.sample_signal(16, 3.0, 6))
        assert np.all((0 <= ms.y) & (ms.y < 1))
        assert ms.truth_norm == pytest.approx(3.0, abs=1e-12)

    def test_noisy_mean_matches_moment(self):
        # E[exp(-<a, x*>_+)] = 1/2 + exp_pos_moment(r): the negative-inner-
        # product half contributes exp(0) = 1, the rest the restricted moment.
        d, m, r, S = 16, 10_000, 2.0, 1e5
        ens = sensing.gaussian_ensemble(d, m, 21)
        x_star = sensing.sample_signal(d, r, 22)
        ms = sensing.generate_measurements(ens, x_star, seed=23, noise="poisson-gaussian", detector_scale=S)
        transmitted = 1.0 - ms.y
        se = transmitted.std(ddof=1) / math.sqrt(m)
        assert abs(transmitted.mean() - (0.5 + theory.exp_pos_moment(r))) <= 4 * se

    def test_noise_reproducible_and_independent_of_ensemble_stream(self):
        ens = sensing.gaussian_ensemble(8, 32, 9)
        a = sensing.generate_measurements(ens, np.ones(8), seed=40, noise="poisson-gaussian", detector_scale=10.0)
        b = sensing.generate_measurements(ens, np.ones(8), seed=40, noise="poisson-gaussian", detector_scale=10.0)
        assert np.array_equal(a.y, b.y)

    def test_rejects_bad_scale(self):
        ens = sensing.gaussian_ensemble(4, 8, 1)
        with pytest.raises(ValueError):
            sensing.generate_measurements(ens, np.zeros(4), noise="poisson-gaussian", detector_scale=0.0)


class TestSampleSignal:
    def test_exact_norm(self):
        x = sensing.sample_signal(5, 2.0, 1)
        assert abs(np.linalg.norm(x) - 2.0) <= 1e-12

    def test_zero_radius(self):
        assert np.array_equal(sensing.sample_signal(5, 0.0, 1), np.zeros(5))

    def test_deterministic(self):
        assert np.array_equal(sensing.sample_signal(9, 1.5, 33), sensing.sample_signal(9, 1.5, 33))


def test_loss_at_zero_concentrates():
    # Empirical f(0) within r sqrt(d/m) of its population value on >= 95/100 draws.
    d, m, r = 32, 1024, 1.0
    expected = theory.expected_loss_at_zero(r)
    radius = r * math.sqrt(d / m)
    hits = 0
    for trial in range(100):
        ens = sensing.gaussian_ensemble(d, m, 5000 + trial)
        x_star = sensing.sample_signal(d, r, 6000 + trial)
        ms = sensing.generate_measurements(ens, x_star)
        hits += abs(ms.y.mean() - expected) <= radius
    assert hits >= 95


class TestSerialization:
    def test_gaussian_roundtrip(self, tmp_path):
        ens = sensing.gaussian_ensemble(6, 10, 77)
        path = str(tmp_path / "ens.bin")
        sensing.save_ensemble(path, ens)
        back = sensing.load_ensemble(path)
        assert isinstance(back, sensing.GaussianEnsemble)
        assert np.array_equal(back.matrix, ens.matrix)
        assert back.seed == 77
        assert (tmp_path / "ens.bin.json").exists()

    def test_rwht_roundtrip(self, tmp_path):
        ens = sensing.rwht_ensemble(8, 3, 13)
        path = str(tmp_path / "rwht.bin")
        sensing.save_ensemble(path, ens)
        back = sensing.load_ensemble(path)
        assert np.array_equal(back.signs, ens.signs)
        x = np.arange(8.0)
        assert np.array_equal(back.apply(x), ens.apply(x))

    def test_explicit_sparse_roundtrip(self, tmp_path):
        import scipy.sparse as sp

        rows = sp.random(12, 9, density=0.3, random_state=1, format="csr")
        ens = sensing.explicit_ensemble(rows)
        path = str(tmp_path / "exp.bin")
        sensing.save_ensemble(path, ens)
        back = sensing.load_ensemble(path)
        assert np.allclose(back.rows.toarray(), rows.toarray())

    def test_measurements_roundtrip(self, tmp_path):
        ens = sensing.gaussian_ensemble(5, 20, 3)
        ms = sensing.generate_measurements(
            ens, sensing.sample_signal(5, 1.0, 4), seed=9, noise="poisson-gaussian", detector_scale=100.0
        )
        path = str(tmp_path / "ms.bin")
        sensing.save_measurements(path, ms)
        back = sensing.load_measurements(path)
        assert np.array_equal(back.y, ms.y)
        assert np.array_equal(back.truth, ms.truth)
        assert back.noise_kind == "poisson-gaussian"
        assert back.detector_scale == 100.0

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(ValueError):
            sensing.load_ensemble(str(path))
