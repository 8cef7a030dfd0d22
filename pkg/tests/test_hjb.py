import csv
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from termincome.errors import DegenerateMarket, EmptyRange, SingularDenominator, ValidationError
from termincome.hjb import (
    SOLUTION_COLUMNS,
    WealthGrid,
    boundary_condition,
    choose_x_max,
    conjugate_transform,
    extract_feedback,
    hjb_curvature,
    linear_fit_r2,
    solve_hjb,
    write_solution_csv,
)
from termincome.model import MarketParams, PowerUtility, merton_marginal, merton_value

moderate = st.builds(
    MarketParams,
    r=st.floats(0.02, 0.08),
    sigma=st.floats(0.1, 0.4),
    lam=st.floats(0.2, 1.0),
    delta=st.floats(0.55, 1.0),
    eta=st.floats(0.02, 0.5),
    a=st.floats(0.02, 0.5),
    p=st.sampled_from([0.3, 0.5]),
)


def test_grid_nodes_and_refine():
    g = WealthGrid(20.0, 4001)
    assert g.h == pytest.approx(0.005)
    assert g.nodes[0] == 20.0 and g.nodes[-1] == 0.0
    assert np.all(np.diff(g.nodes) < 0)
    fine = g.refine()
    assert fine.n == 8001 and fine.h == pytest.approx(g.h / 2)
    np.testing.assert_allclose(fine.nodes[::2], g.nodes, rtol=0, atol=1e-12)
    with pytest.raises(ValidationError):
        WealthGrid(20.0, 2)
    with pytest.raises(ValidationError):
        WealthGrid(-1.0, 10)


def test_boundary_condition_values(paper_params, caplog):
    with caplog.at_level(logging.WARNING, logger="termincome"):
        u, du = boundary_condition(20.0, paper_params)
    shifted = 20.0 + 0.2 / 0.15
    assert u == merton_value(shifted, paper_params)
    assert du == merton_marginal(shifted, paper_params)
    assert "boundary approximation is loose" in caplog.text


def test_choose_x_max_meets_one_percent(paper_params):
    x_bar = choose_x_max(paper_params)
    gap = merton_value(x_bar + paper_params.a / paper_params.r, paper_params) - merton_value(x_bar, paper_params)
    assert gap <= 0.01 * merton_value(x_bar, paper_params) * (1 + 1e-9)
    assert x_bar > 20.0


def test_curvature_errors(paper_params):
    with pytest.raises(DegenerateMarket):
        solve_hjb(paper_params.replace(lam=0.0))
    P = paper_params
    x, du = 1.0, 3.0
    util = PowerUtility(P.p)
    # choose u so that the denominator vanishes exactly
    u = (util.V(du) + P.eta * merton_value(x, P) + (P.r * x + P.a) * du) / P.alpha
    with pytest.raises(SingularDenominator):
        hjb_curvature(x, u, du, P)


def test_curvature_sign_is_concave(paper_params):
    x = 1.0
    u, du = merton_value(x + 4 / 3, paper_params), merton_marginal(x + 4 / 3, paper_params)
    assert hjb_curvature(x, u, du, paper_params) < 0


def test_paper_solution_shape(paper_solution):
    sol = paper_solution
    assert np.all(sol.du1 > 0)
    assert np.all(sol.ddu1 < 0)
    assert np.all(np.diff(sol.u1) < 0)  # x descending
    assert math.isfinite(sol.y_star) and sol.y_star == sol.du1[-1]
    assert sol.u1[-1] == pytest.approx(5.984080207033544, rel=1e-12)
    assert sol.y_star == pytest.approx(2.2036485832607986, rel=1e-12)


def test_solution_arrays_are_read_only(paper_solution):
    with pytest.raises(ValueError):
        paper_solution.u1[0] = 0.0


def test_no_income_reduction_is_exact(paper_params):
    p0 = paper_params.replace(a=0.0)
    sol = solve_hjb(p0, WealthGrid(20.0, 4001))
    np.testing.assert_array_equal(sol.u1, sol.u0())
    assert sol.y_star == math.inf


@settings(max_examples=15, deadline=None)
@given(params=moderate)
def test_reductions_for_other_markets(params):
    grid = WealthGrid(10.0, 2001)
    p0 = params.replace(a=0.0)
    sol0 = solve_hjb(p0, grid)
    np.testing.assert_array_equal(sol0.u1, sol0.u0())
    sol_inf = solve_hjb(params.replace(eta=0.0), grid)
    np.testing.assert_array_equal(sol_inf.u1, sol_inf.u_inf())
    # near-zero termination stays close to the perpetual value
    sol_eps = solve_hjb(params.replace(eta=1e-9), grid)
    assert np.max(np.abs(sol_eps.u1 - sol_eps.u_inf()) / sol_eps.u_inf()) < 1e-6


@settings(max_examples=15, deadline=None)
@given(params=moderate)
def test_sandwich_and_shape_for_other_markets(params):
    sol = solve_hjb(params, WealthGrid(10.0, 2001))
    assert np.all(sol.u0() <= sol.u1) and np.all(sol.u1 <= sol.u_inf())
    assert np.all(sol.du1 > 0) and np.all(sol.ddu1 < 0)


@settings(max_examples=10, deadline=None)
@given(k=st.sampled_from([0.25, 0.5, 2.0, 4.0]), params=moderate)
def test_homogeneity_in_wealth_and_income(k, params):
    """Scaling wealth and income by k scales the value by k**p."""
    base = solve_hjb(params, WealthGrid(10.0, 1001))
    scaled = solve_hjb(params.replace(a=k * params.a), WealthGrid(10.0 * k, 1001))
    np.testing.assert_allclose(scaled.u1, k**params.p * base.u1, rtol=1e-10)


def test_value_increases_with_income_and_decreases_with_eta(paper_params):
    u_a = [solve_hjb(paper_params.replace(a=a)).u1[-1] for a in (0.0, 0.05, 0.1, 0.2, 0.4)]
    assert u_a[0] == 0.0 and np.all(np.diff(u_a) > 0)
    u_eta = [solve_hjb(paper_params.replace(eta=e)).u1[-1] for e in (0.0, 0.05, 0.1, 0.2, 0.5, 10.0)]
    assert np.all(np.diff(u_eta) < 0)
    # eta = 0 is the perpetual bound at zero wealth
    assert u_eta[0] == pytest.approx(float(merton_value(0.2 / 0.05, paper_params)), rel=1e-6)


def test_fourth_order_away_from_zero(paper_params):
    """Refinement ratio approaches 16 where the solution is smooth.

    At zero wealth the ``eta u0`` source term behaves like ``sqrt(x)`` and
    the observed ratio is near 5.7.
    """
    sols = [solve_hjb(paper_params, WealthGrid(20.0, n)) for n in (501, 1001, 2001)]
    far = sols[0].x >= 1.0
    d1 = np.max(np.abs(sols[0].u1[far] - sols[1].u1[::2][far]))
    d2 = np.max(np.abs(sols[1].u1[::2][far] - sols[2].u1[::4][far]))
    assert d1 / d2 >= 8.0


def test_residual_small_away_from_zero(paper_solution):
    # residuals live on interior nodes
    far = paper_solution.x[1:-1] >= 0.05
    assert np.nanmax(np.abs(paper_solution.residuals[far])) < 1e-4


@pytest.mark.xfail(strict=True, reason="centered differences of u lose accuracy like sqrt(h) at x = 0; "
                                         "max residual is 8.3e-4 at x = h for n = 4001")
def test_residual_everywhere_below_threshold(paper_solution):
    assert paper_solution.residual_max < 1e-4


def test_feedback_formulas(paper_params, paper_solution, paper_policy):
    sol, pol = paper_solution, paper_policy
    util = PowerUtility(paper_params.p)
    np.testing.assert_array_equal(pol.c1, util.I(sol.du1))
    expected_pi = -(paper_params.lam / paper_params.sigma) * sol.du1 / sol.ddu1
    np.testing.assert_allclose(pol.pi1, expected_pi, rtol=1e-15)
    inner = sol.x > 0
    np.testing.assert_allclose(pol.theta1[inner], pol.pi1[inner] / sol.x[inner], rtol=1e-15)
    assert pol.c1[-1] > 0 and pol.pi1[-1] > 0


def test_feedback_no_income(paper_params):
    sol = solve_hjb(paper_params.replace(a=0.0))
    pol = extract_feedback(sol)
    assert pol.c1[-1] == 0.0 and pol.pi1[-1] == 0.0
    inner = sol.x > 0
    np.testing.assert_allclose(pol.c1[inner], paper_params.K * sol.x[inner], rtol=1e-9)
    np.testing.assert_allclose(pol.pi1[inner], paper_params.merton_proportion * sol.x[inner], rtol=1e-9)


def test_feedback_near_upper_boundary_is_shifted_merton(paper_params, paper_solution, paper_policy):
    shifted = 20.0 + paper_params.a / (paper_params.r + paper_params.eta)
    assert paper_policy.c1[0] == pytest.approx(paper_params.K * shifted, rel=1e-12)


def test_linear_fit_r2():
    x = np.linspace(0, 1, 20)
    assert linear_fit_r2(x, 3 * x + 1) == pytest.approx(1.0)
    assert linear_fit_r2(x, x**4) < 1.0


@settings(max_examples=40, deadline=None)
@given(frac=st.floats(0.0, 0.999), node=st.integers(0, 4000))
def test_fenchel_inequality(paper_solution, frac, node):
    sol = paper_solution
    y = sol.du1[0] + frac * (sol.y_star - sol.du1[0])
    dual = conjugate_transform(sol, np.array([y]))
    assert dual.v[0] >= sol.u1[node] - sol.x[node] * y - 1e-12


def test_conjugate_round_trip(paper_solution):
    sol = paper_solution
    y = np.linspace(sol.du1[0], sol.y_star, 4001)[:-1]
    dual = conjugate_transform(sol, y)
    assert np.max(np.abs(dual.u_roundtrip - sol.u1)) <= 5 * (sol.grid.h + (y[1] - y[0])) * sol.du1.max()
    # argmax follows the inverse marginal
    i = 1000
    assert dual.argmax_x[i] == pytest.approx(np.interp(y[i], sol.du1, sol.x), abs=2 * sol.grid.h)


def test_conjugate_rejects_out_of_range(paper_solution):
    with pytest.raises(EmptyRange):
        conjugate_transform(paper_solution, np.array([0.5, paper_solution.y_star]))
    with pytest.raises(EmptyRange):
        conjugate_transform(paper_solution, np.array([0.0, 1.0]))


def test_value_and_marginal_interpolation(paper_solution):
    sol = paper_solution
    assert sol.value_at(1.0) == pytest.approx(7.895403771412198, rel=1e-12)
    i = int(np.argmin(np.abs(sol.x - 1.0)))
    assert sol.marginal_at(1.0) == sol.du1[i]


def test_solution_csv(tmp_path, paper_solution, paper_policy):
    path = write_solution_csv(tmp_path / "s.csv", paper_solution, paper_policy)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SOLUTION_COLUMNS
    assert len(rows) == paper_solution.grid.n + 1
    xs = [float(r[0]) for r in rows[1:]]
    assert xs[0] == 20.0 and xs[-1] == 0.0
    assert float(rows[1][1]) == paper_solution.u1[0]
    assert all(float(r[4]) <= float(r[1]) <= float(r[5]) for r in rows[1:])
    again = write_solution_csv(tmp_path / "t.csv", paper_solution, paper_policy)
    assert again.read_bytes() == path.read_bytes()
