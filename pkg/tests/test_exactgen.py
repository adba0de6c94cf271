from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bricklayers.errors import ComplexityError, ProfileError
from bricklayers.exactgen import (
    CylinderFunction,
    brute_force_evolution,
    derivative_combination,
    expect_cylinder,
    generator_apply,
    identity_battery,
    lhs_derivative,
    mixture_law,
    product_law,
    random_profile,
    rhs_lemma51,
    rhs_theorem41,
    tail_budget,
    total_variation,
)
from bricklayers.kernel import ParameterProfile, RateFunction, u_of_theta
from bricklayers.walkers import WalkerConfig, master_equation

EXP1 = RateFunction.exponential(1.0)
LINEAR = RateFunction.custom(lambda z: z + 1.0)
DOUBLING = RateFunction.custom(lambda z: 2.0 * z)
SHOCK = ParameterProfile.single_shock(1.0, 0.0, 0)


def test_expectation_of_constant_is_one():
    prof = ParameterProfile.single_shock(0.7, -0.2, 1)
    assert expect_cylinder(prof, CylinderFunction.constant(1.0), EXP1) == pytest.approx(1.0, abs=1e-12)


def test_marginal_and_independence():
    prof = ParameterProfile.single_shock(0.4, -0.9, 1)
    u0, u1 = u_of_theta(EXP1, 0.4), u_of_theta(EXP1, -0.9)
    assert expect_cylinder(prof, CylinderFunction.coordinate(0), EXP1) == pytest.approx(u0, abs=1e-12)
    assert expect_cylinder(prof, CylinderFunction.neighbour_product(0), EXP1) == pytest.approx(u0 * u1, abs=1e-12)


def test_width_guard():
    wide = CylinderFunction(0, 6, lambda *w: sum(w) * 1.0)
    with pytest.raises(ComplexityError):
        expect_cylinder(ParameterProfile.constant(0.0), wide, EXP1)


def test_declared_bound_is_enforced():
    phi = CylinderFunction(0, 0, lambda w: w * 1.0, bound=1.0)
    with pytest.raises(ValueError):
        expect_cylinder(ParameterProfile.constant(0.0), phi, EXP1)


def test_locality_of_evaluator():
    phi = CylinderFunction.neighbour_product(0)
    a = np.array([2])
    # extra coordinates outside the support are not even passed in
    assert phi(a, a) == 4.0
    lphi = generator_apply(phi, EXP1)
    assert (lphi.left, lphi.right) == (-1, 2)


def test_generator_on_coordinate_matches_expansion():
    lphi = generator_apply(CylinderFunction.coordinate(0), EXP1)
    w = np.array([-2, -1, 0, 1, 3])
    for a, b, c in [(w, 0 * w, w[::-1]), (w + 1, w, w - 1)]:
        r = EXP1.rates
        expected = (r(a) + r(-b)) - (r(b) + r(-c))
        np.testing.assert_allclose(lphi(a, b, c), expected, rtol=1e-14)


def test_generator_kills_constants():
    lphi = generator_apply(CylinderFunction.constant(3.0), EXP1)
    grid = np.ix_(np.arange(-3, 4), np.arange(-3, 4), np.arange(-3, 4))
    assert np.all(lphi(*grid) == 0.0)


@pytest.mark.parametrize("make", [CylinderFunction.coordinate, CylinderFunction.square])
@pytest.mark.parametrize("theta", [-0.8, 0.0, 0.35])
def test_constant_profile_is_stationary(make, theta):
    prof = ParameterProfile.constant(theta)
    assert abs(lhs_derivative(prof, make(0), EXP1)) < 1e-10
    assert rhs_lemma51(prof, make(0), EXP1) == 0.0
    assert rhs_theorem41(prof, make(0), EXP1) == 0.0


def test_single_shock_hand_value():
    phi = CylinderFunction.coordinate(0)
    assert lhs_derivative(SHOCK, phi, EXP1) == pytest.approx(math.e - 1, abs=1e-12)
    assert rhs_theorem41(SHOCK, phi, EXP1) == pytest.approx(math.e - 1, abs=1e-12)
    assert rhs_lemma51(SHOCK, phi, EXP1) == pytest.approx(math.e - 1, abs=1e-12)


@pytest.mark.parametrize("rf", [EXP1, LINEAR, DOUBLING])
def test_lemma_holds_for_any_rate(rf):
    for make in (CylinderFunction.coordinate, CylinderFunction.square, CylinderFunction.indicator):
        phi = make(0)
        assert abs(lhs_derivative(SHOCK, phi, rf) - rhs_lemma51(SHOCK, phi, rf)) < 1e-8


@pytest.mark.parametrize("rf", [LINEAR, DOUBLING])
def test_parameter_shift_form_fails_for_other_rates(rf):
    phi = CylinderFunction.coordinate(0)
    assert abs(lhs_derivative(SHOCK, phi, rf) - rhs_theorem41(SHOCK, phi, rf, beta=1.0)) > 0.01


def test_theorem_form_requires_beta_for_custom_rates():
    with pytest.raises(ValueError):
        rhs_theorem41(SHOCK, CylinderFunction.coordinate(0), LINEAR)


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
def test_battery_random_profiles(beta):
    rng = np.random.default_rng(int(beta * 10))
    rf = RateFunction.exponential(beta)
    recs = identity_battery([random_profile(rng) for _ in range(5)], rf, sites=(0, 1))
    assert max(r.residual_theorem41 for r in recs) < 1e-8
    assert max(r.residual_lemma51 for r in recs) < 1e-8


def test_battery_rejects_empty_list():
    with pytest.raises(ProfileError):
        identity_battery([], EXP1)


@settings(max_examples=30, deadline=None)
@given(
    vals=st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=5),
    start=st.integers(-3, 1),
    beta=st.sampled_from([0.5, 1.0, 2.0]),
)
def test_coefficient_mass_is_zero(vals, start, beta):
    prof = ParameterProfile.from_values(start, vals)
    comb = derivative_combination(prof, beta)
    assert abs(comb.total_mass) < 1e-12
    for c, p in comb.terms[1:]:
        assert len(p.discontinuities) <= len(prof.discontinuities) + 2


@settings(max_examples=15, deadline=None)
@given(vals=st.lists(st.floats(-1.2, 1.2), min_size=2, max_size=4), start=st.integers(-2, 1))
def test_closure_property(vals, start):
    prof = ParameterProfile.from_values(start, vals)
    phi = CylinderFunction.neighbour_product(0)
    lhs = lhs_derivative(prof, phi, EXP1)
    assert abs(lhs - rhs_theorem41(prof, phi, EXP1)) < 1e-8
    assert abs(lhs - rhs_lemma51(prof, phi, EXP1)) < 1e-8


def test_tail_budget_is_small_and_positive():
    b = tail_budget(SHOCK, CylinderFunction.coordinate(0), EXP1)
    assert 0.0 < b < 1e-4


# -- finite chain -------------------------------------------------------------


def test_chain_initial_law_is_product():
    prof = ParameterProfile.single_shock(0.5, -0.5, 2, beta=1.0)
    law = brute_force_evolution(prof, EXP1, range(0, 3), (-3, 3), 0.0)
    assert total_variation(law, product_law(prof, EXP1, range(0, 3), (-3, 3))) == 0.0
    assert law.leak == 0.0


def test_chain_conserves_mass_and_stays_nonnegative():
    prof = ParameterProfile.single_shock(0.5, -0.5, 1, beta=1.0)
    law = brute_force_evolution(prof, EXP1, range(0, 3), (-3, 3), 0.7)
    assert law.probs.min() >= 0.0
    assert law.mass == pytest.approx(1.0, abs=1e-10)
    assert law.leak > 0.0


def test_chain_constant_profile_is_stationary_up_to_leak():
    prof = ParameterProfile.constant(0.3)
    law = brute_force_evolution(prof, EXP1, range(0, 4), (-4, 4), 0.3)
    tv = total_variation(law, product_law(prof, EXP1, range(0, 4), (-4, 4)))
    assert tv < law.leak


def test_chain_matches_walker_mixture():
    prof = ParameterProfile.single_shock(0.5, -0.5, 2, beta=1.0)
    sites, window = range(0, 4), (-4, 4)
    law = brute_force_evolution(prof, EXP1, sites, window, 0.5)
    wl = master_equation(WalkerConfig.from_profile(prof), 0.5, bounds=(-0.5, 3.5))
    mix = mixture_law(wl.mixture(), EXP1, sites, window)
    assert total_variation(law, mix) < 1e-3 + law.leak


def test_chain_size_guard():
    with pytest.raises(ComplexityError):
        brute_force_evolution(ParameterProfile.constant(0.0), EXP1, range(0, 6), (-6, 6), 0.1)


def test_closed_boundary_conserves_sum():
    prof = ParameterProfile.single_shock(0.5, -0.5, 1, beta=1.0)
    window = (-3, 3)
    law = brute_force_evolution(prof, EXP1, range(0, 3), window, 0.4, boundary="closed")
    idx = np.indices(law.probs.shape).sum(axis=0) + 3 * window[0]
    law0 = product_law(prof, EXP1, range(0, 3), window)
    assert float((law.probs * idx).sum()) == pytest.approx(float((law0.probs * idx).sum()), abs=1e-10)
