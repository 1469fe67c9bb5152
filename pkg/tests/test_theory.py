import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rtcvae.gaussian import gaussian_tc
from rtcvae.theory import (
    SINGULAR_MEAN_COV,
    close_probability,
    close_probability_exact,
    disparity_construct,
    gaussian_tc_cap,
    theorem1_bound_shape,
)

LN101 = math.log(101.0)


def rho_sweep_sup(sigma, v, grid=20001):
    """Largest gaussian_tc(Sigma + s^2 I) over correlations rho in [0, 1)."""
    sd = np.sqrt(v)
    best = 0.0
    for rho in np.linspace(0.0, 1.0, grid, endpoint=False):
        S = np.diag(v).astype(float)
        S[0, 1] = S[1, 0] = rho * sd[0] * sd[1]
        best = max(best, gaussian_tc(S + sigma**2 * np.eye(2)))
    return best


class TestBoundShape:
    def test_equal_constants(self):
        assert theorem1_bound_shape(0.1, 0.1, 2) == pytest.approx(40000.0, rel=1e-12)

    def test_log_term_vanishes(self):
        c3 = max(0.5, math.sqrt(3))
        assert theorem1_bound_shape(0.5, 0.5, 3) == pytest.approx((c3 / 0.5) ** 5)

    def test_nonincreasing_in_c1(self):
        vals = [theorem1_bound_shape(c1, 2.0, 4) for c1 in np.linspace(0.05, 2.0, 200)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_diverges_as_c1_vanishes(self):
        assert theorem1_bound_shape(1e-6, 1.0, 2) > 1e20

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            theorem1_bound_shape(0.2, 0.1, 2)


class TestCap:
    def test_isotropic_unit(self):
        assert gaussian_tc_cap(0.1, [1.0, 1.0]) == pytest.approx(LN101, rel=1e-12)

    def test_mixed(self):
        assert gaussian_tc_cap(1.0, [1.0, 0.01]) == pytest.approx(0.5 * (math.log(2) + math.log(1.01)), rel=1e-12)

    def test_vanishes_with_large_noise(self):
        assert gaussian_tc_cap(1e4, [1.0, 1.0]) < 1e-7

    @pytest.mark.parametrize("sigma, v", [(0.1, (1.0, 1.0)), (1.0, (1.0, 0.01)), (0.3, (2.0, 0.5))])
    def test_bounds_rho_sweep(self, sigma, v):
        # a valid upper bound; the sweep supremum sits strictly below it
        sup = rho_sweep_sup(sigma, np.array(v))
        assert sup <= gaussian_tc_cap(sigma, v)

    def test_per_dimension_noise(self):
        assert gaussian_tc_cap([0.1, 1.0], [1.0, 1.0]) == pytest.approx(0.5 * (LN101 + math.log(2)))


class TestDisparity:
    def test_zero_target(self):
        inst = disparity_construct(0.0, [0.1, 0.1])
        assert inst.tc_mean == 0.0
        assert inst.tc_sample_gaussian == pytest.approx(0.0, abs=1e-14)

    def test_fig1_instance(self):
        inst = disparity_construct(math.inf, [0.1, 1.0])
        assert np.array_equal(inst.mean_cov, SINGULAR_MEAN_COV)
        assert inst.tc_mean == math.inf
        direct = gaussian_tc(np.array([[1.01, 0.1], [0.1, 1.01]]))
        assert inst.tc_sample_gaussian == pytest.approx(direct, abs=1e-12)
        assert inst.tc_sample_gaussian == pytest.approx(0.00492, abs=5e-5)

    def test_target_two(self):
        inst = disparity_construct(2.0, [0.1, 0.1])
        assert inst.mean_cov[0, 1] == pytest.approx(0.990800, abs=1e-6)
        assert abs(inst.tc_mean - 2.0) < 1e-9
        assert abs(gaussian_tc(inst.mean_cov) - 2.0) < 1e-9

    @given(st.floats(0.0, 12.0), st.floats(0.05, 2.0), st.floats(0.05, 2.0))
    def test_sample_matches_closed_form(self, target, s0, s1):
        inst = disparity_construct(target, [s0, s1])
        assert inst.tc_sample_gaussian == pytest.approx(gaussian_tc(inst.sample_cov), abs=1e-9)
        assert np.array_equal(inst.conditional_std, [s0, s1])
        assert inst.tc_sample_gaussian <= gaussian_tc_cap([s0, s1], [1.0, 1.0]) + 1e-12

    def test_saturation_sweep(self):
        for t in (1, 2, 4, 8, 16, math.inf):
            inst = disparity_construct(float(t), [0.1, 0.1])
            assert inst.tc_mean == t
            assert inst.tc_sample_gaussian <= LN101

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            disparity_construct(-1.0, [0.1, 0.1])


class TestCloseProbability:
    def test_zero(self):
        assert close_probability(0.0) == 0.0

    def test_formula_values(self):
        assert close_probability(1.0) == pytest.approx(math.sqrt(1 - math.exp(-0.25)), rel=1e-14)
        assert close_probability(1.0) == pytest.approx(0.470318, abs=1e-6)
        assert close_probability(0.2) == pytest.approx(0.09975, abs=1e-5)

    def test_small_t_expansion(self):
        for t in (1e-3, 1e-2, 0.05):
            assert close_probability(t) == pytest.approx(t / 2, rel=t)

    def test_increasing_to_one(self):
        vals = [close_probability(t) for t in np.linspace(0.01, 8.0, 400)]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert close_probability(20.0) == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(0.0, 10.0))
    def test_disk_formula_below_exact(self, t):
        assert close_probability(t) <= close_probability_exact(t) + 1e-15

    def test_exact_matches_monte_carlo(self):
        x = np.random.default_rng(0).normal(0.0, math.sqrt(2.0), 1_000_000)
        for t in (0.1, 0.5, 1.0):
            assert abs(np.mean(np.abs(x) < t) - close_probability_exact(t)) < 2e-3
