import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from conftest import random_hermitian
from mfbose import ldp, solver
from mfbose.errors import IdentityAssertionError, ValidationError
from mfbose.model import build_lattice, build_observable, potential_preset

# Free gas, cos-mode observable on the three-mode lattice: each particle sits in
# the zero mode and the centered observable takes the values +-1/sqrt(2) with
# probability 1/2, so S / sqrt(2) is a centered binomial walk.
A = 1 / np.sqrt(2)


def iid_scgf(lam):
    return np.log(np.cosh(A * lam))


def iid_tail_ge(N, x):
    # S = A (2k - N) >= N x  <=>  k >= N (x / A + 1) / 2
    kmin = np.ceil(N * (x / A + 1) / 2 - 1e-9)
    return binom.sf(kmin - 1, N, 0.5)


@pytest.fixture
def free_law(lattice1, cos_mode):
    pot = potential_preset({"preset": "zero"}, lattice1)
    return lambda N: ldp.observable_law(pot, cos_mode, lattice1, N)


class TestIid:
    @pytest.mark.parametrize("N", [2, 5, 8])
    def test_condensate_ground_state(self, free_law, N):
        law = free_law(N)
        assert law.energy == pytest.approx(0.0, abs=1e-12)
        assert np.count_nonzero(np.abs(law.psi) > 1e-12) == 1

    @pytest.mark.parametrize("N", [3, 6])
    def test_scgf_closed_form(self, free_law, N):
        law = free_law(N)
        lams = np.linspace(0, 1, 11)
        res = ldp.scgf(law.psi, law.S, lams, N)
        np.testing.assert_allclose(res.values, iid_scgf(lams), atol=1e-10)
        assert res.convex

    def test_cumulants(self, free_law):
        N = 6
        law = free_law(N)
        k = ldp.cumulants(law.psi, law.S, N)
        # Rademacher times A: kappa_2 = A^2, kappa_4 = -2 A^4 per particle
        np.testing.assert_allclose(k, [0.0, 0.5, 0.0, -0.5], atol=1e-12)
        assert ldp.second_derivative_fd(law.psi, law.S, N) == pytest.approx(0.5, abs=1e-6)

    @pytest.mark.parametrize("N", [4, 7, 10])
    def test_tails(self, free_law, N):
        law = free_law(N)
        x = np.array([0.0, 0.1, A / 2, 0.5, A])
        ge = ldp.tail_probabilities(law.measure, N, x, strict=False)
        np.testing.assert_allclose(ge, iid_tail_ge(N, x), atol=1e-12)
        gt = ldp.tail_probabilities(law.measure, N, x, strict=True)
        assert np.all(gt <= ge + 1e-15)
        assert gt[-1] == pytest.approx(0.0, abs=1e-12)
        assert ge[-1] == pytest.approx(0.5 ** N, rel=1e-9)

    def test_monte_carlo(self, free_law):
        N, samples = 8, 20000
        law = free_law(N)
        rng = np.random.default_rng(11)
        sums = A * (2 * rng.binomial(N, 0.5, size=samples) - N)
        x = np.array([0.1, 0.3, 0.5])
        emp = np.array([(sums >= N * xi - 1e-9).mean() for xi in x])
        p = ldp.tail_probabilities(law.measure, N, x, strict=False)
        assert np.all(np.abs(emp - p) <= 3 * np.sqrt(p * (1 - p) / samples) + 1e-12)

    def test_clt_decreases(self, free_law):
        d = [ldp.clt_distance(free_law(N).measure, N, 0.5) for N in (4, 6, 8, 10, 12)]
        assert all(b < a for a, b in zip(d, d[1:]))

    def test_chernoff(self, free_law):
        N = 8
        law = free_law(N)
        lams = np.linspace(0, 4, 81)
        sc = ldp.scgf(law.psi, law.S, lams, N)
        x = np.linspace(0.05, 0.7, 14)
        ge = ldp.tail_probabilities(law.measure, N, x, strict=False)
        res = ldp.chernoff_check(sc.values, lams, ge, N, x)
        assert res.min_margin >= -1e-10
        assert not res.vacuous.any()


class TestPieces:
    def test_scgf_validation(self):
        with pytest.raises(ValidationError):
            ldp.scgf(np.ones(1), np.eye(1), [], 2)
        with pytest.raises(ValidationError):
            ldp.scgf(np.ones(1), np.eye(1), [-0.1], 2)

    def test_cumulant_order(self):
        with pytest.raises(ValidationError):
            ldp.cumulants(np.ones(1), np.eye(1), 1, order=5)

    @settings(max_examples=20)
    @given(st.integers(0, 10_000))
    def test_raw_moments(self, seed):
        rng = np.random.default_rng(seed)
        S = random_hermitian(7, rng)
        psi = rng.standard_normal(7) + 1j * rng.standard_normal(7)
        psi /= np.linalg.norm(psi)
        ref = [np.vdot(psi, np.linalg.matrix_power(S, k) @ psi).real for k in range(1, 5)]
        np.testing.assert_allclose(ldp.raw_moments(psi, S), ref, atol=1e-10 * max(1, abs(ref[-1])))

    @settings(max_examples=20)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_scgf_convex_and_chernoff_random(self, seed, N):
        # a random Hermitian S and state satisfy convexity and the Chernoff inequality exactly
        rng = np.random.default_rng(seed)
        S = random_hermitian(10, rng)
        psi = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        psi /= np.linalg.norm(psi)
        lams = np.linspace(0, 3, 31)
        sc = ldp.scgf(psi, S, lams, N)
        assert sc.convex
        meas = solver.spectral_measure_dense(S, psi)
        x = np.linspace(-0.5, 1.0, 7)
        ldp.chernoff_check(sc.values, lams, ldp.tail_probabilities(meas, N, x, strict=False), N, x)

    def test_chernoff_raises(self):
        with pytest.raises(IdentityAssertionError):
            ldp.chernoff_check(np.array([0.0, 0.0]), [0.0, 1.0], [1.0], 2, [0.5])

    def test_legendre_quadratic(self):
        c = 0.7
        lams = np.linspace(0, 5, 5001)
        x = np.array([0.0, 0.5, 1.0, 2.0])
        res = ldp.legendre(c * lams ** 2 / 2, lams, x)
        np.testing.assert_allclose(res.values, x ** 2 / (2 * c), atol=1e-6)
        assert not res.at_boundary[1:].any()
        with pytest.warns(UserWarning):
            ldp.legendre(c * lams ** 2 / 2, lams, [10.0])

    def test_empirical_rate_zero_probability(self):
        assert np.isinf(ldp.empirical_rate([0.0], 3)[0])

    def test_fit_power(self):
        x = np.linspace(0.1, 1, 10)
        assert ldp.fit_power(x, 3 * x ** 2.5) == pytest.approx(2.5)
        assert math.isnan(ldp.fit_power([1.0], [1.0]))

    def test_extrapolation(self):
        Ns = np.array([4, 6, 8, 10, 12])
        vals = 2.0 + 3.0 / Ns - 1.0 / Ns ** 2
        out = ldp.extrapolate_inverse_N(Ns, vals)
        assert out["limit"] == pytest.approx(2.0, abs=1e-12)
        assert ldp.extrapolate_inverse_N([4], [1.0])["skipped"]

    def test_comparison(self):
        x = np.linspace(0.01, 0.1, 6)
        emp = x ** 2 + 0.2 * x ** 3
        out = ldp.theorem_bound_comparison(x, 0.5, 1.0, emp)
        assert out["residual_exponent"] == pytest.approx(3.0, abs=1e-9)
        with pytest.raises(ValidationError):
            ldp.theorem_bound_comparison(x, 0.0, 1.0, emp)

    def test_clt_point_mass(self):
        m = solver.SpectralMeasure(np.array([0.0]), np.array([1.0]))
        assert ldp.clt_distance(m, 4, 0.0) == 0.0

    def test_reference_window(self):
        w = ldp.reference_window(0.5, 2.0, points=4)
        np.testing.assert_allclose(w, [0.03125, 0.0625, 0.09375, 0.125])

    def test_select_convention(self):
        assert ldp.select_convention(0.5, {"paired": 0.5, "literal": 0.5}) == "paired"
        assert ldp.select_convention(0.6, {"paired": 0.5, "literal": 0.59}) == "literal"


class TestReports:
    def test_report_roundtrip(self, lattice1, weak, cos_mode):
        law = ldp.observable_law(weak, cos_mode, lattice1, 6)
        rep = ldp.ldp_report(law, np.linspace(0, 2, 21), np.linspace(0.05, 0.5, 4), 0.49, 28.6, config_hash="abc")
        d = json.loads(rep.to_json())
        assert d["N"] == 6 and d["config_hash"] == "abc"
        assert rep.lambda_csv().splitlines()[1] == "N,lambda,Lambda_N"
        assert len(rep.x_csv().splitlines()) == 2 + 4
        assert np.all(rep.chernoff_margins >= -1e-10)

    def test_free_sweep(self, lattice1, cos_mode):
        pot = potential_preset({"preset": "zero"}, lattice1)
        res = ldp.n_sweep(pot, cos_mode, lattice1, [4, 6, 8], np.linspace(0, 2, 21), [0.1, 0.3])
        np.testing.assert_allclose(res.var_per_N, 0.5, atol=1e-12)
        assert res.convention == "paired"
        assert res.summary()["var_relative_error"] <= 1e-12
        assert res.csv().splitlines()[0].startswith("N,var_per_N,f_norm_sq,clt_kolmogorov")
        assert np.all(np.diff(res.clt) < 0)

    def test_sweep_threads_match(self, lattice1, weak, cos_mode):
        lams = np.linspace(0, 1, 6)
        a = ldp.n_sweep(weak, cos_mode, lattice1, [4, 6], lams, [0.2])
        b = ldp.n_sweep(weak, cos_mode, lattice1, [4, 6], lams, [0.2], threads=2)
        np.testing.assert_array_equal(a.scgf, b.scgf)
        assert a.csv() == b.csv()

    def test_sweep_order(self, lattice1, weak, cos_mode):
        with pytest.raises(ValidationError):
            ldp.n_sweep(weak, cos_mode, lattice1, [6, 4], [0.0, 1.0])

    def test_kpm_warning(self, lattice1, cos_mode):
        pot = potential_preset({"preset": "zero"}, lattice1)
        law = ldp.observable_law(pot, cos_mode, lattice1, 4, dense_limit=2)
        with pytest.warns(UserWarning):
            ldp.tail_probabilities(law.measure, 4, [0.1])
