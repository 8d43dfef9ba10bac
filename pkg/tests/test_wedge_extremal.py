import math

import numpy as np
import pytest

from mazya_lab.core import GridFunction, ProblemParams, rayleigh_quotient
from mazya_lab.sphere_eig import CapGeometry, lambda_p_cap
from mazya_lab.wedge_extremal import (
    ExtremalSolution, Region, SolverOptions, WedgeDomain, euler_lagrange_residual, minimize_quotient,
    obstacle_sweep, perturbed_compare, scaled_residual, stationarity_scale,
)

P = ProblemParams(2, 3, 2.0, 0.5)
QUARTER = CapGeometry(2, math.pi / 4)
HALF = CapGeometry(2, math.pi / 2)
FAST = SolverOptions(n_starts=1)


def small_domain(cap=QUARTER, theta_max=None):
    return WedgeDomain.build(2, 3, cap, 10, 10, 12, 4, 12, 1.15, theta_max=theta_max)


@pytest.fixture(scope="module")
def quarter_solution():
    dom = small_domain()
    return dom, minimize_quotient(P, dom, SolverOptions(n_starts=2, tol=1e-14, max_iter=2000))


def test_converged_solution(quarter_solution):
    _, sol = quarter_solution
    assert sol.converged and sol.diagnostic == "converged"
    assert sol.el_residual < 1e-8
    assert np.all(sol.profile.values >= -1e-12)
    assert all(b >= sol.mu for b in sol.basins)


def test_residual_of_random_state_is_large(quarter_solution):
    _, sol = quarter_solution
    rng = np.random.default_rng(3)
    v = sol.profile.values * (1 + 0.1 * rng.uniform(-1, 1, sol.profile.values.shape))
    noisy = GridFunction.masked(sol.profile.grid, v, sol.profile.mask)
    other = ExtremalSolution(sol.mu, noisy, 0.0, 0, False)
    assert euler_lagrange_residual(other, P) > 1e2 * euler_lagrange_residual(sol, P)


def test_scaled_residual_minimized_at_stationarity_scale(quarter_solution):
    _, sol = quarter_solution
    c0 = stationarity_scale(sol, P)
    cs = c0 * np.exp(np.linspace(-0.3, 0.3, 61))
    r = [scaled_residual(sol.profile, P, c) for c in cs]
    best = cs[int(np.argmin(r))]
    assert abs(best / c0 - 1) < 0.011
    assert min(r) < 1e-6


def test_abs_value_does_not_raise_quotient(quarter_solution):
    _, sol = quarter_solution
    rng = np.random.default_rng(0)
    v = sol.profile.values * rng.choice([-1.0, 1.0], sol.profile.values.shape)
    f = GridFunction.masked(sol.profile.grid, v, sol.profile.mask)
    g = GridFunction.masked(sol.profile.grid, np.abs(v), sol.profile.mask)
    assert rayleigh_quotient(g, P) <= rayleigh_quotient(f, P)


def test_cap_inclusion_monotone_on_matched_grid():
    # theta nodes of the quarter cap domain built up to pi/2 contain both caps
    dom_q = small_domain(QUARTER, theta_max=math.pi / 2)
    sol_q = minimize_quotient(P, dom_q, FAST)
    dom_h = WedgeDomain(HALF, dom_q.Ry, dom_q.Rz, dom_q.grid)
    assert np.all(dom_h.mask() <= dom_q.mask())
    sol_h = minimize_quotient(P, dom_h, FAST, initial=sol_q.profile.values)
    assert sol_h.mu <= sol_q.mu


def test_disjoint_bump_gives_equal_constant():
    dom = small_domain(QUARTER, theta_max=math.pi / 2)
    res = perturbed_compare(P, dom, Region((0.3, 3.0), (1.2, math.pi / 2), (0.0, 2.0)), FAST)
    assert res.mu_perturbed == res.mu_base
    assert res.gap == 0.0


def test_overlapping_bump_strictly_lowers_infimum():
    dom = small_domain(QUARTER, theta_max=math.pi / 2)
    bump = Region((0.3, 3.0), (math.pi / 4 - 0.1, math.pi / 2), (0.0, 2.0))
    res = perturbed_compare(P, dom, bump, FAST)
    assert res.mu_perturbed <= res.mu_base
    assert res.gap > 0 and res.gap > res.grid_error


def test_bump_on_axis_rejected():
    with pytest.raises(ValueError):
        perturbed_compare(P, small_domain(), Region((0.0, 1.0), (0.0, 0.5), (0.0, 1.0)), FAST)


def test_obstacle_sweep():
    dom = small_domain(HALF)
    rep = obstacle_sweep(P, dom, Region((1.0, 2.0), (0.0, math.pi / 2), (0.0, 1.0)),
                         lambdas=(1.0, 0.5, 0.25), opts=FAST)
    assert rep.mu_obstacle >= rep.mu_base
    assert rep.gaps[0] >= rep.gaps[-1]
    assert all(g >= -1e-9 for g in rep.gaps)


def test_sigma_zero_requires_diagnostic_mode():
    with pytest.raises(ValueError):
        minimize_quotient(ProblemParams(2, 3, 2.0, 0.0), small_domain(), FAST)


def test_sigma_zero_drifts_to_cap_value_from_above():
    P0 = ProblemParams(2, 3, 2.0, 0.0)
    target = lambda_p_cap(2.0, QUARTER, 256).lam ** 0.5
    opts = SolverOptions(n_starts=1, sigma0_diagnostic=True)
    mus = [minimize_quotient(P0, WedgeDomain.build(2, 3, QUARTER, 20, 20, k, 8, k, 1.1), opts).mu
           for k in (12, 24)]
    assert mus[0] > mus[1] > target - 1e-6
