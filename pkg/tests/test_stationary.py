import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from golden import A3, M3
from oracles import extrapolated_constants
from kscrit.errors import InvalidInputError
from kscrit.profiles import Grid, Parameters, derivative
from kscrit.stationary import (contraction_factor, critical_constants, default_delta, find_a_for_mass,
                               flat_point_refinement,
                               integral_equation_solve, picard_local, shoot, solve_Pa, unit_ball_volume,
                               unit_shot)


def test_oracle_reproduces_golden_constants():
    A, M = extrapolated_constants(2 / 3, 70.0, 250_000)
    assert A == pytest.approx(A3, abs=1e-6)
    assert M == pytest.approx(M3, abs=1e-9)


def test_critical_constants_match_golden(cc3):
    assert cc3.A == pytest.approx(A3, abs=1e-8)
    assert cc3.M == pytest.approx(M3, abs=1e-10)
    assert cc3.M_bar == pytest.approx(27 * unit_ball_volume(3) * cc3.M)
    assert 0 < cc3.M <= 2


def test_shooting_matches_golden():
    s = unit_shot(2 / 3)
    assert s.flat_point == pytest.approx(A3, abs=1e-7)
    assert s.plateau == pytest.approx(M3, abs=1e-10)


def test_unit_ball_volume():
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert unit_ball_volume(2) == pytest.approx(math.pi)


# ------------------------------------------------------------------ Picard start

def test_default_delta_is_contractive():
    for a in (0.1, 1.0, 10.0, 300.0):
        assert contraction_factor(a, 2 / 3, default_delta(a, 2 / 3)) < 1


def test_picard_series_expansion():
    # u = a x - a^{1+q} x^{1+q} / (q (1+q)) + O(x^{1+2q})
    q, a = 2 / 3, 2.0
    sol = picard_local(a, q)
    x = np.array([1e-6, 1e-5, 1e-4])
    lead = a * x - a ** (1 + q) * x ** (1 + q) / (q * (1 + q))
    assert np.all(np.abs(sol.u(x) - lead) <= 5 * (a * x) ** (1 + 2 * q))
    assert sol.ratio(np.array(0.0)) == pytest.approx(a, rel=1e-13)
    assert sol.du(np.array(0.0)) == pytest.approx(a, rel=1e-13)


def test_picard_halves_oversized_delta():
    sol = picard_local(1.0, 2 / 3, delta=0.5)
    assert sol.delta < 0.5 and sol.contraction < 1


def test_picard_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        picard_local(-1.0, 0.5)
    with pytest.raises(InvalidInputError):
        picard_local(1.0, 1.5)


def test_zero_slope_gives_zero_profile(P3):
    U = solve_Pa(0.0, P3)
    assert np.all(U.profile.values == 0.0)


# ------------------------------------------------------------------ profiles U_a

@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 200.0), st.floats(0.0, 1.0))
def test_scaling_law(a, x):
    U = solve_Pa(a, Parameters(3))
    assert float(U.evaluate(np.array(x))) == pytest.approx(float(unit_shot(2 / 3).u(np.array(a * x))), abs=1e-8)


def test_flat_point_scales_inversely(P3, cc3):
    for a in (0.5, 2.0, 10.0):
        assert solve_Pa(a, P3).flat_point == pytest.approx(cc3.A / a, rel=1e-8)


def test_profile_bounds_and_concavity(P3):
    U = solve_Pa(3.0, P3)
    x = U.profile.grid.nodes
    v = U.profile.values
    assert np.all(v >= 0) and np.all(v <= 2)
    assert np.all(v <= 3.0 * x + 1e-12)
    du = U.slope(x)
    assert np.all(np.diff(du) <= 1e-12)


def test_profiles_ordered_in_slope(P3):
    x = np.linspace(0, 1, 101)
    lo, hi = solve_Pa(5.0, P3).evaluate(x), solve_Pa(8.0, P3).evaluate(x)
    assert np.all(lo <= hi + 1e-14)


def test_profile_solves_the_ode(P3):
    U = solve_Pa(1.0, P3, n_cells=4096)
    x = np.linspace(1.0, 50.0, 200)
    h = 1e-3
    upp = (U.evaluate(x + h) - 2 * U.evaluate(x) + U.evaluate(x - h)) / h**2
    res = x ** (4 / 3) * upp + U.evaluate(x) * U.slope(x) ** (2 / 3)
    assert np.max(np.abs(res)) < 1e-5


def test_bracket_vanishes_at_flat_point():
    s = unit_shot(2 / 3)
    assert float(s.bracket(np.array(s.flat_point * (1 - 1e-12)))) == pytest.approx(0.0, abs=1e-9)
    assert float(s.du(np.array(s.flat_point + 1.0))) == 0.0


def test_short_window_has_no_flat_point():
    s = shoot(1.0, 2 / 3, 10.0)
    assert math.isinf(s.flat_point)


def test_sample_on_other_grid(P3):
    U = solve_Pa(2.0, P3)
    g = Grid.graded(100)
    prof = U.sample(g)
    assert prof.values[0] == 0 and prof.derivative_at_zero == 2.0
    assert np.max(np.abs(derivative(prof)[1:-1] - U.slope(g.nodes[1:-1]))) < 1e-2


def test_integral_equation_agrees_with_shooting(P3):
    ie = integral_equation_solve(P3, tol=1e-12, n_cells=2**15)
    s = unit_shot(2 / 3)
    assert ie.flat_point == pytest.approx(s.flat_point, abs=1e-5)
    assert ie.max_value == pytest.approx(s.plateau, abs=1e-8)
    x = np.linspace(0, 60, 50)
    assert np.max(np.abs(ie.evaluate(x) - s.u(x))) < 1e-7


def test_other_dimension():
    cc4 = critical_constants(4)
    assert 0 < cc4.M <= 2 and cc4.A > 0
    U = solve_Pa(1.0, Parameters(4))
    assert U.max_value == pytest.approx(cc4.M, rel=1e-8)


# ------------------------------------------------------------------ mass inversion

@pytest.mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_unique_solution_below_critical_mass(P3, cc3, frac):
    res = find_a_for_mass(frac * cc3.M, P3)
    assert res.kind == "unique"
    assert 0 < res.a < cc3.A
    assert float(unit_shot(2 / 3).u(np.array(res.a))) == pytest.approx(frac * cc3.M, abs=1e-10)


def test_mass_inversion_is_monotone(P3, cc3):
    a = [find_a_for_mass(f * cc3.M, P3).a for f in (0.2, 0.4, 0.6, 0.8, 0.99)]
    assert np.all(np.diff(a) > 0)


def test_continuum_and_none(P3, cc3):
    res = find_a_for_mass(cc3.M, P3)
    assert res.kind == "continuum" and res.a_min == cc3.A and not res.in_tolerance_band
    assert find_a_for_mass(cc3.M + 1e-12, P3).in_tolerance_band
    assert find_a_for_mass(1.01 * cc3.M, P3).kind == "none"
    assert find_a_for_mass(0.0, P3).a == 0.0
    with pytest.raises(InvalidInputError):
        find_a_for_mass(-1.0, P3)


def test_flat_point_refinement_is_reported():
    study = flat_point_refinement(Parameters(3), levels=(2**10, 2**11, 2**12))
    assert len(study.A) == 3 and len(study.orders) == 1
    assert math.isfinite(study.orders[0])
    with pytest.raises(InvalidInputError):
        flat_point_refinement(Parameters(3), levels=(2**10, 2**11))
