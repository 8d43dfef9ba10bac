import math

import numpy as np
import pytest

from mazya_lab.core.flow import QuotientProblem
from mazya_lab.halfspace import (
    HalfspaceSolution, fit_asymptotics, interpolator, kelvin, kelvin_check, quarter_space_mu,
    solve_halfspace,
)


def test_solution_invariants(halfspace_small):
    sol = halfspace_small
    assert sol.converged and sol.diagnostic == "converged"
    assert sol.residual < 1e-3
    v, mask = sol.phi.values, sol.phi.mask
    assert np.all(v[~mask] > 0)
    y1, _, _ = sol.reduced_coords()
    assert np.all(v[np.isclose(y1, 0.0, atol=1e-12)] == 0.0)
    pb = QuotientProblem(sol.grid, mask, 2.0, sol.q, sol.sigma)
    assert sol.normalized and abs(pb.S(v) - 1.0) < 1e-8
    assert pb.J(v) == pytest.approx(sol.mu_q, rel=1e-10)
    assert sol.cross_check < 1e-4


def test_decreasing_in_t(halfspace_small):
    v = halfspace_small.phi.values
    assert np.all(np.diff(v, axis=2) <= 1e-12 * v.max())


def test_quarter_space_not_below_half_space(halfspace_small):
    assert quarter_space_mu(halfspace_small) >= halfspace_small.mu_q


def test_truncation_stable(halfspace_small):
    big = solve_halfspace(2, 3, 0.5, box=40.0, resolution=29, ratio=1.15, n_theta=12)
    assert abs(big.mu_q / halfspace_small.mu_q - 1) < 0.01


def test_rejects_sigma_outside_open_interval():
    with pytest.raises(ValueError):
        solve_halfspace(2, 3, 1.0, resolution=8)


def test_kelvin_is_involution(halfspace_small):
    f = interpolator(halfspace_small)
    KK = kelvin(kelvin(f, 3), 3)
    rng = np.random.default_rng(0)
    rho, th, t = rng.uniform(0.3, 3, 50), rng.uniform(0, math.pi / 2, 50), rng.uniform(0.3, 3, 50)
    assert np.max(np.abs(KK(rho, th, t) - f(rho, th, t))) < 1e-12


def test_kelvin_check_report(halfspace_small):
    rep = kelvin_check(halfspace_small)
    assert rep.involution_error < 1e-6
    assert rep.roundtrip_error < 0.05
    assert rep.residual_kelvin < 5 * rep.residual_phi
    assert rep.near_exponent_kelvin == pytest.approx(rep.expected_near_exponent, abs=0.1)


def test_kelvin_window_must_fit():
    g_sol = solve_halfspace(2, 3, 0.5, box=4.0, resolution=8, ratio=1.2)
    with pytest.raises(ValueError):
        kelvin_check(g_sol, window=(0.1, 1.0))


def test_asymptotic_fit_runs_and_flags_tight_window(halfspace_small):
    fit = fit_asymptotics(halfspace_small, far_window=(2.0, 10.0))
    assert fit.M > 0
    assert any("truncation" in w for w in fit.warnings)


def test_save_load_roundtrip(tmp_path, halfspace_small):
    js, cv = halfspace_small.save(tmp_path / "hs")
    back = HalfspaceSolution.load(tmp_path / "hs")
    assert js.exists() and cv.exists()
    assert np.array_equal(back.phi.values, halfspace_small.phi.values)
    assert back.mu_q == halfspace_small.mu_q and back.M == halfspace_small.M
