import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bricklayers.errors import ConvergenceError, ProfileError, RateRangeError, ThetaRangeError
from bricklayers.kernel import (
    ParameterProfile,
    RateFunction,
    build_measure,
    expected_rates,
    log_rate_factorial,
    mean_u,
    rate_eval,
    rate_factorial,
    shift_identity_residual,
    theta_of_u,
    u_of_theta,
    variance_u,
)

EBL1 = RateFunction.exponential(1.0)
LINEAR = RateFunction.custom(lambda z: z + 1)

custom_tables = st.lists(st.floats(0.05, 20.0), min_size=10, max_size=40)


# Frozen with mpmath at 40 digits: sum over |z| <= 10 of exp(-z^2 / 2).
Z_EBL1_THETA0 = 2.506628288042905544830679
PMF0_EBL1_THETA0 = 0.3989422782668617055816805


def test_partition_oracle_is_what_we_froze():
    mpmath.mp.dps = 40
    z = mpmath.fsum(mpmath.e ** (-mpmath.mpf(k) ** 2 / 2) for k in range(-10, 11))
    assert abs(float(z) - Z_EBL1_THETA0) < 1e-15


class TestRates:
    def test_exponential_value(self):
        assert rate_eval(EBL1, 1) == pytest.approx(math.exp(0.5), rel=1e-15)

    @pytest.mark.parametrize("rf", [EBL1, RateFunction.exponential(0.3), LINEAR])
    def test_reciprocity(self, rf):
        for z in range(-8, 9):
            assert rate_eval(rf, z) * rate_eval(rf, 1 - z) == pytest.approx(1.0, rel=1e-12)

    def test_custom_negative_side_from_reciprocity(self):
        rf = RateFunction.custom([1.5, 3.0, 4.0])
        assert rate_eval(rf, -1) == pytest.approx(1 / 3)
        assert rate_eval(rf, 0) == pytest.approx(1 / 1.5)

    def test_overflow_guard(self):
        with pytest.raises(RateRangeError):
            rate_eval(EBL1, 800)
        with pytest.raises(RateRangeError):
            rate_eval(RateFunction.custom([2.0, 3.0]), 5)

    @given(custom_tables, st.integers(-9, 9))
    def test_reciprocity_any_table(self, table, z):
        rf = RateFunction.custom(table, theta_bar=1.0)
        assert rate_eval(rf, z) * rate_eval(rf, 1 - z) == pytest.approx(1.0, rel=1e-12)

    def test_theta_bar_and_monotone_flags(self):
        assert EBL1.theta_bar == math.inf
        assert LINEAR.monotone and LINEAR.theta_bar > 5
        assert not RateFunction.custom([0.5, 2.0, 3.0]).monotone

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            RateFunction.exponential(-1.0)
        with pytest.raises(ValueError):
            RateFunction.custom([1.0, -2.0])

    def test_dict_round_trip(self):
        for rf in (EBL1, LINEAR):
            assert RateFunction.from_dict(rf.to_dict()) == rf


class TestRateFactorial:
    def test_empty_product(self):
        assert rate_factorial(EBL1, 0) == 1.0

    def test_exponential_two(self):
        # r(1) r(2) = e^{1/2} e^{3/2}
        assert rate_factorial(EBL1, 2) == pytest.approx(math.e**2, rel=1e-14)

    @pytest.mark.parametrize("rf", [EBL1, RateFunction.exponential(0.7), LINEAR])
    def test_recursion_and_symmetry(self, rf):
        for z in range(-10, 11):
            lhs = rate_factorial(rf, z + 1)
            assert lhs == pytest.approx(rate_factorial(rf, z) * rate_eval(rf, z + 1), rel=1e-12)
        for z in range(0, 11):
            assert log_rate_factorial(rf, -z) == pytest.approx(log_rate_factorial(rf, z), abs=1e-12)

    def test_exponential_closed_form(self):
        beta = 0.8
        rf = RateFunction.exponential(beta)
        for z in range(-12, 13):
            assert log_rate_factorial(rf, z) == pytest.approx(beta * z * z / 2, abs=1e-12)


class TestMeasure:
    def test_partition_value(self):
        m = build_measure(EBL1, 0.0)
        assert m.Z == pytest.approx(Z_EBL1_THETA0, rel=1e-13)
        assert m.pmf_at(0) == pytest.approx(PMF0_EBL1_THETA0, rel=1e-13)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("theta", [-1.7, -0.3, 0.0, 0.45, 2.2])
    def test_discrete_gaussian_form(self, beta, theta):
        rf = RateFunction.exponential(beta)
        m = build_measure(rf, theta)
        z = m.support
        w = np.exp(-beta / 2 * (z - theta / beta) ** 2)
        np.testing.assert_allclose(m.pmf, w / w.sum(), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("rf", [EBL1, RateFunction.exponential(0.5), LINEAR])
    @pytest.mark.parametrize("theta", [-1.2, 0.0, 0.8])
    def test_ratio_identities(self, rf, theta):
        m = build_measure(rf, theta)
        z = m.support[1:-1]
        p = m.pmf
        up = math.exp(theta) * p[:-2] / p[1:-1]
        down = math.exp(-theta) * p[2:] / p[1:-1]
        np.testing.assert_allclose(up, rf.rates(z), rtol=1e-10)
        np.testing.assert_allclose(down, rf.rates(-z), rtol=1e-10)

    @given(st.floats(-3, 3), st.floats(0.2, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_normalisation_and_tail(self, theta, beta):
        m = build_measure(RateFunction.exponential(beta), theta)
        assert 1 - m.tail_tol <= math.fsum(m.pmf) <= 1 + 1e-14
        assert m.tail_mass < m.tail_tol

    def test_theta_out_of_range(self):
        rf = RateFunction.custom([2.0] * 50, theta_bar=math.log(2.0))
        with pytest.raises(ThetaRangeError):
            build_measure(rf, 0.9)

    def test_custom_non_convergence(self):
        # Constant rate 2: weights e^{theta z} 2^{-|z|}, heavy tails as theta -> log 2.
        rf = RateFunction.custom([2.0] * 512, theta_bar=math.log(2.0))
        with pytest.raises(ConvergenceError):
            build_measure(rf, math.log(2.0) - 1e-3)

    def test_csv_export(self, tmp_path):
        m = build_measure(EBL1, 0.2)
        path = tmp_path / "pmf.csv"
        m.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "z,pmf"
        assert len(lines) == len(m.pmf) + 1
        assert m.to_dict() == {"kind": "exponential", "beta": 1.0, "theta": 0.2, "tail_tol": 1e-12}


class TestMoments:
    def test_symmetric_means(self):
        assert u_of_theta(EBL1, 0.0) == pytest.approx(0.0, abs=1e-14)
        assert u_of_theta(EBL1, 0.5) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("theta", [-0.9, 0.1, 0.77])
    def test_unit_jump_per_beta(self, beta, theta):
        rf = RateFunction.exponential(beta)
        assert u_of_theta(rf, theta + beta) - u_of_theta(rf, theta) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("rf", [EBL1, RateFunction.exponential(0.4), LINEAR])
    @pytest.mark.parametrize("theta", [-0.8, 0.0, 0.35, 1.1])
    def test_variance_is_derivative(self, rf, theta):
        h = 1e-4
        fd = (u_of_theta(rf, theta + h) - u_of_theta(rf, theta - h)) / (2 * h)
        var = variance_u(build_measure(rf, theta))
        assert var > 0
        assert var == pytest.approx(fd, abs=1e-6)

    @pytest.mark.parametrize("theta", [-0.6, 0.13, 0.9])
    def test_variance_period_beta(self, theta):
        beta = 0.7
        rf = RateFunction.exponential(beta)
        v0 = variance_u(build_measure(rf, theta))
        v1 = variance_u(build_measure(rf, theta + beta))
        assert v1 == pytest.approx(v0, abs=1e-10)

    @pytest.mark.parametrize("rf", [EBL1, LINEAR])
    def test_mean_strictly_increasing(self, rf):
        grid = np.linspace(-2, 2, 81)
        u = np.array([u_of_theta(rf, t) for t in grid])
        assert np.all(np.diff(u) > 0)


class TestInverse:
    def test_fixed_points(self):
        assert theta_of_u(EBL1, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert theta_of_u(EBL1, 1.0) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("rf", [EBL1, RateFunction.exponential(2.0), LINEAR])
    def test_round_trip(self, rf):
        rng = np.random.default_rng(7)
        tol = 1e-11
        for theta in rng.uniform(-2, 2, size=20):
            assert abs(theta_of_u(rf, u_of_theta(rf, theta), tol=tol) - theta) < tol

    def test_unattainable_density(self):
        rf = RateFunction.custom([2.0] * 512, theta_bar=math.log(2.0))
        with pytest.raises(ThetaRangeError):
            theta_of_u(rf, 1e6)


class TestExpectedRates:
    def test_theta_zero(self):
        right, left = expected_rates(build_measure(EBL1, 0.0))
        assert right == pytest.approx(1.0, abs=1e-11)
        assert left == pytest.approx(1.0, abs=1e-11)

    def test_theta_one(self):
        m = build_measure(EBL1, 1.0)
        right, left = expected_rates(m)
        assert abs(right - math.e) < 10 * m.tail_tol
        assert abs(left - math.exp(-1)) < 10 * m.tail_tol

    @pytest.mark.parametrize("rf", [LINEAR, RateFunction.custom(lambda z: 2 * z), RateFunction.exponential(0.5)])
    @pytest.mark.parametrize("theta", [-1.0, 0.2, 1.3])
    def test_general_rates(self, rf, theta):
        m = build_measure(rf, theta)
        right, left = expected_rates(m)
        assert right == pytest.approx(math.exp(theta), rel=10 * m.tail_tol)
        assert left == pytest.approx(math.exp(-theta), rel=10 * m.tail_tol)


class TestShiftIdentity:
    def test_exponential_beta_shift(self):
        assert shift_identity_residual(EBL1, 0.3, 1.0) < 1e-10

    def test_exponential_wrong_shift(self):
        assert shift_identity_residual(EBL1, 0.3, 0.5) > 0.01

    @pytest.mark.parametrize("delta", np.linspace(-2, 2, 17))
    def test_linear_rate_never_shifts(self, delta):
        assert shift_identity_residual(LINEAR, 0.3, float(delta)) > 0.01

    def test_partition_periodicity(self):
        # Z(theta) = e^{-theta - beta/2} Z(theta + beta)
        for beta in (0.5, 1.0, 2.0):
            rf = RateFunction.exponential(beta)
            for theta in (-0.4, 0.25, 1.6):
                a = build_measure(rf, theta).log_Z
                b = build_measure(rf, theta + beta).log_Z
                assert a == pytest.approx(-theta - beta / 2 + b, abs=1e-12)


class TestProfile:
    def test_single_shock(self):
        p = ParameterProfile.single_shock(1.0, 0.0, 3, beta=1.0)
        assert p.theta(2) == 1.0 and p.theta(3) == 0.0
        assert p.theta_left == 1.0 and p.theta_right == 0.0
        assert p.discontinuities == (3,)
        assert p.is_decreasing and p.is_beta_quantized

    def test_from_values_drops_redundant(self):
        p = ParameterProfile.from_values(-1, [0.5, 0.5, -0.5, 0.2])
        assert p.breakpoints == ((1, -0.5), (2, 0.2))
        assert not p.is_decreasing
        np.testing.assert_array_equal(p.thetas([-5, 0, 1, 2, 9]), [0.5, 0.5, -0.5, 0.2, 0.2])

    def test_shifted(self):
        p = ParameterProfile.single_shock(1.0, 0.0, 3, beta=1.0)
        up = p.shifted(3, 1.0)
        assert up == ParameterProfile.single_shock(1.0, 0.0, 4, beta=1.0)
        down = p.shifted(2, -1.0)
        assert down == ParameterProfile.single_shock(1.0, 0.0, 2, beta=1.0)

    def test_quantization(self):
        assert not ParameterProfile.single_shock(1.0, 0.3, 0, beta=1.0).is_beta_quantized
        assert not ParameterProfile.single_shock(1.0, 0.0, 0).is_beta_quantized

    def test_duplicate_sites(self):
        with pytest.raises(ProfileError):
            ParameterProfile(0.0, ((1, 0.1), (1, 0.2)))

    def test_round_trip(self):
        p = ParameterProfile.from_values(-2, [1.0, 0.0, -1.0], beta=1.0)
        assert ParameterProfile.from_dict(p.to_dict()) == p
