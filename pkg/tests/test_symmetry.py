import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mazya_lab.core import GridFunction, ProblemParams
from mazya_lab.core.flow import QuotientProblem
from mazya_lab.core.grid import AxiGrid, boundary_mask
from mazya_lab.symmetry import (
    SymmetryBreakingQuery, p_hat, radial_profile, rearrange_z, rearrangement_check,
    second_variation_bound, second_variation_numeric, sigma_hat, smooth_corpus,
    two_solutions_check,
)

P6 = ProblemParams(2, 3, 4.0, 0.6)


def test_bound_examples():
    assert second_variation_bound(2, 3, 4, 0) == 4.0
    assert second_variation_bound(2, 3, 4, 0.5) == -4.0
    assert abs(second_variation_bound(2, 3, 4, 3 / 8)) < 1e-14


def test_bound_rejects_p_not_above_m():
    with pytest.raises(ValueError):
        second_variation_bound(3, 5, 3, 0.1)


@given(st.integers(2, 5), st.integers(1, 4), st.floats(0.05, 3.0), st.floats(0.0, 0.98),
       st.floats(0.01, 0.5))
def test_bound_strictly_decreasing(m, extra, dp, frac, step):
    n = m + extra
    p = m + dp
    top = min(1.0, n / p)
    s1 = frac * top
    s2 = s1 + step * (top - s1)
    if s2 > s1:
        assert second_variation_bound(m, n, p, s2) < second_variation_bound(m, n, p, s1)


def test_sigma_hat_examples():
    sh = sigma_hat(2, 3, 4)
    assert sh.value == pytest.approx(0.375, abs=1e-14)
    assert abs(sh.bisection - sh.value) < 1e-10
    assert sh.admissible and sh.upper == 0.75
    assert abs(second_variation_bound(2, 3, 4, sh.value)) < 1e-12
    sh = sigma_hat(3, 5, 4.5)
    assert sh.value == pytest.approx(10 / 11.25, abs=1e-12)
    assert sh.admissible


def test_p_hat_quadratic_root():
    assert p_hat(2, 10) == pytest.approx((3 + math.sqrt(33)) / 2, abs=1e-8)
    for m, n in ((2, 3), (2, 7), (3, 8), (4, 9)):
        assert m < p_hat(m, n) < n


def test_sigma_hat_admissible_beyond_n():
    for m, n in ((2, 3), (2, 5), (3, 6), (4, 7)):
        for p in np.linspace(n, 3 * n, 9):
            sh = sigma_hat(m, n, p)
            assert sh.value < min(1.0, n / p)


def test_query_flags_breaking():
    assert SymmetryBreakingQuery.of(2, 3, 4, 0.6).breaking
    assert not SymmetryBreakingQuery.of(2, 3, 4, 0.2).breaking


@pytest.fixture(scope="module")
def radial():
    sol, _ = radial_profile(P6, n_rho=24, n_t=24, ratio=1.15)
    return sol


def test_second_variation_negative_with_vanishing_cross(radial):
    sv = second_variation_numeric(radial.profile, P6)
    assert sv.cross < 1e-12
    assert sv.d2J < 0
    # the Hoelder/Hardy chain for h = u y1/|y| carries the factor (m-1)/m
    assert sv.d2J <= sv.sharp_bound


def test_second_variation_matches_finite_difference(radial):
    sv = second_variation_numeric(radial.profile, P6)
    g = radial.profile.grid
    g3 = AxiGrid.build(2, 3, [("rho", g.axis("rho").nodes), ("theta", np.linspace(0, math.pi, 65)),
                              ("t", g.axis("t").nodes, True)])
    u = np.broadcast_to(radial.profile.values[:, None, :], g3.shape).copy()
    h = u * np.cos(g3.node_coords("theta"))
    pb = QuotientProblem(g3, boundary_mask(g3, rho=("low", "high"), t="high"), 4.0, P6.q, 0.6)
    fd = [(pb.J(u + s * h) - 2 * pb.J(u) + pb.J(u - s * h)) / s ** 2 for s in (0.05, 0.025)]
    extrapolated = (4 * fd[1] - fd[0]) / 3
    assert extrapolated == pytest.approx(sv.d2J, rel=0.02)


def test_second_variation_rejects_angular_profile():
    g = AxiGrid.build(2, 3, [("rho", np.linspace(0, 2, 5)), ("theta", np.linspace(0, math.pi, 5)),
                             ("t", np.linspace(0.25, 2.25, 5), True)])
    u = GridFunction(g, 1.0 + np.cos(g.mesh("theta")), np.zeros(g.shape, bool))
    with pytest.raises(ValueError):
        second_variation_numeric(u, P6)


def test_two_solutions_radial_value_exceeds_unrestricted(radial):
    rep = two_solutions_check(P6, radial, n_theta=8, descent_iter=10)
    assert rep.J_radial_3d == pytest.approx(rep.J_radial, rel=1e-9)
    assert rep.strict and rep.J_descent < rep.J_radial


def _corpus_grid(n=12):
    g = AxiGrid.build(2, 3, [("rho", np.linspace(0, 4, n + 1)), ("theta", np.linspace(0, math.pi, 9)),
                             ("t", (np.arange(n + 1) + 0.5) * 4 / n, True)])
    return g, boundary_mask(g, rho="high", t="high")


def test_rearrangement_invariants_on_corpus():
    g, mask = _corpus_grid()
    P = ProblemParams(2, 3, 2.0, 0.5)
    for v in smooth_corpus(g, mask, np.random.default_rng(0), count=10):
        chk = rearrangement_check(v, P)
        assert chk.exact
        assert max(chk.norm_errors.values()) < 1e-10
        assert chk.idempotency == 0.0
        assert chk.energy_ratio <= 1e-3


def test_rearrangement_keeps_decreasing_function():
    g, mask = _corpus_grid()
    v = GridFunction.masked(g, np.exp(-g.mesh("t") ** 2 - g.mesh("rho")), mask)
    assert np.array_equal(rearrange_z(v).function.values, v.values)


def test_rearrangement_needs_nonnegative():
    g, mask = _corpus_grid()
    with pytest.raises(ValueError):
        rearrange_z(GridFunction.masked(g, np.sin(g.mesh("t")), mask))
