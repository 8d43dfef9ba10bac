import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mazya_lab.core import (AxiGrid, Case, DomainKind, GridFunction, ProblemParams,
                            admissibility_case, boundary_mask, critical_exponent,
                            dirichlet_energy, graded_nodes, rayleigh_quotient, sphere_area,
                            weighted_norm)
from mazya_lab.core.flow import FlowOptions, QuotientProblem, minimize


def test_critical_exponent_examples():
    assert critical_exponent(3, 2, 1.0) == 6.0
    assert critical_exponent(4, 2, 0.5) == pytest.approx(8 / 3, abs=1e-15)
    assert ProblemParams(2, 4, 2.0, 0.5).q == pytest.approx(8 / 3, abs=1e-15)


@given(st.integers(3, 9), st.floats(1.1, 8.0), st.floats(0.0, 0.98), st.floats(0.0, 0.98))
def test_critical_exponent_increasing_in_sigma(n, p, s1, s2):
    top = min(1.0, 0.999 * n / p)
    a, b = sorted((s1 * top, s2 * top))
    assert critical_exponent(n, p, 0.0) == p
    qa, qb = critical_exponent(n, p, a), critical_exponent(n, p, b)
    assert qb >= qa
    if b - a > 1e-9:
        assert qb > qa


def test_params_validation():
    with pytest.raises(ValueError):
        ProblemParams(3, 3, 2.0, 0.5)
    with pytest.raises(ValueError):
        ProblemParams(2, 3, 4.0, 0.8)      # sigma p >= n
    with pytest.raises(ValueError):
        ProblemParams(2, 3, 1.0, 0.5)


def test_admissibility_cases():
    assert admissibility_case(ProblemParams(2, 3, 2.0, 1.0), DomainKind.WHOLE_SPACE) is Case.A
    assert admissibility_case(ProblemParams(2, 3, 2.0, 0.0),
                              DomainKind.COMPLEMENT_OF_RAY_WEDGE) is Case.C
    assert admissibility_case(ProblemParams(2, 3, 3.0, 0.0), DomainKind.COMPLEMENT_OF_P) is Case.B
    assert admissibility_case(ProblemParams(2, 3, 2.0, 0.0),
                              DomainKind.WHOLE_SPACE) is Case.INADMISSIBLE


def test_sphere_area():
    assert sphere_area(0) == 2.0
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)


def _polar_grid(n_cells=16, R=2.0, m=2, n=3):
    return AxiGrid.build(m, n, [("rho", np.linspace(0, R, n_cells + 1)),
                                ("theta", np.linspace(0, math.pi, 9)),
                                ("t", graded_nodes(R, n_cells, 1.0, mirror=True), True)])


def test_cell_measures_sum_to_volume():
    # box |y| < R, |z| < R in R^3 with y in R^2, z in R: volume pi R^2 * 2R
    g = _polar_grid(R=2.0)
    assert g.cell_measures().sum() == pytest.approx(math.pi * 4 * 4, rel=1e-12)


def test_weighted_norm_zero_and_single_cell():
    g = _polar_grid()
    P = ProblemParams(2, 3, 2.0, 0.5)
    mask = boundary_mask(g, rho="high", t="high")
    assert weighted_norm(GridFunction(g, np.zeros(g.shape), mask), P, 3.0) == 0.0
    # smooth far-from-axis bump: norm of cell-constant data ~ |y|^{sigma-1} (measure)^{1/s}
    u = np.zeros(g.shape)
    i, j, k = 10, 4, 3
    u[i, j, k] = 1.0
    v = GridFunction(g, u, mask)
    val = weighted_norm(v, P, 2.0)
    rho = g.axis("rho").nodes[i]
    # hat function: int phi^2 = (2/3)^d of the dual cell in 1-D per axis, times the measure
    approx = rho ** (P.sigma - 1) * math.sqrt(g.lumped_weights()[i, j, k] * (2 / 3) ** 3)
    assert val == pytest.approx(approx, rel=0.05)


def _smooth(g):
    rho, t = g.mesh("rho"), g.mesh("t")
    return np.exp(-(rho - 1.0) ** 2 * 4 - t ** 2 * 4) * rho ** 2 * (2 - rho) * (2 - t)


def test_norm_converges_under_refinement():
    P = ProblemParams(2, 3, 2.0, 0.5)
    vals = []
    for nc in (8, 16, 32, 64):
        g = _polar_grid(nc)
        mask = boundary_mask(g, rho="high", t="high")
        vals.append(weighted_norm(GridFunction.masked(g, _smooth(g), mask), P, P.q))
    d = np.abs(np.diff(vals))
    order = math.log2(d[-2] / d[-1])
    assert order >= 1.5


def test_energy_of_linear_function():
    # u = x t on an interior patch in the y-radial (rho, t) grid: |grad u|^2 = 1 exactly
    g = AxiGrid.build(2, 3, [("rho", np.linspace(1.0, 2.0, 5)), ("t", np.linspace(1, 2, 5))])
    u = np.broadcast_to(g.node_coords("t"), g.shape)
    v = GridFunction(g, u, np.zeros(g.shape, bool))
    meas = g.cell_measures().sum()
    assert dirichlet_energy(v, 2.0) == pytest.approx(meas, rel=1e-12)
    assert dirichlet_energy(v, 3.0) == pytest.approx(meas, rel=1e-12)


@given(st.floats(0.1, 10.0), st.sampled_from([2.0, 3.0]))
def test_homogeneity(c, p):
    g = _polar_grid(8)
    P = ProblemParams(2, 3, p, 0.5)
    mask = boundary_mask(g, rho="high", t="high")
    v = GridFunction.masked(g, _smooth(g), mask)
    assert weighted_norm(v.scaled(c), P, P.q) == pytest.approx(c * weighted_norm(v, P, P.q),
                                                               rel=1e-12)
    assert dirichlet_energy(v.scaled(c), p) == pytest.approx(c ** p * dirichlet_energy(v, p),
                                                             rel=1e-12)
    assert rayleigh_quotient(v.scaled(c), P) == pytest.approx(rayleigh_quotient(v, P), rel=1e-12)


def test_quotient_dilation_invariance():
    # exact for the interpolant carried on the dilated grid
    P = ProblemParams(2, 3, 2.0, 0.5)
    g = _polar_grid(16)
    mask = boundary_mask(g, rho="high", t="high")
    v = GridFunction.masked(g, _smooth(g), mask)
    for lam in (0.5, 3.0):
        assert rayleigh_quotient(v.dilated(lam), P) == pytest.approx(rayleigh_quotient(v, P),
                                                                     rel=1e-10)


def test_quotient_dilation_by_interpolation_is_O_h():
    from scipy.interpolate import RegularGridInterpolator
    P = ProblemParams(2, 3, 2.0, 0.5)
    errs = []
    for nc in (16, 32):
        g = _polar_grid(nc, R=4.0)
        mask = boundary_mask(g, rho="high", t="high")
        u = np.where(g.mesh("rho") < 2, _smooth(g), 0.0) * (g.mesh("t") < 2)
        v = GridFunction.masked(g, u, mask)
        f = RegularGridInterpolator([a.nodes for a in g.axes], v.values, bounds_error=False,
                                    fill_value=0.0)
        t0 = g.axis("t").nodes[0]
        pts = np.stack([g.mesh("rho").ravel() / 1.5, g.mesh("theta").ravel(),
                        np.maximum(g.mesh("t").ravel() / 1.5, t0)], -1)
        w = GridFunction.masked(g, f(pts).reshape(g.shape), mask)
        errs.append(abs(rayleigh_quotient(w, P) / rayleigh_quotient(v, P) - 1))
    assert errs[1] < errs[0] and errs[1] < 0.05


def test_flow_monotone_and_power_cross_check():
    P = ProblemParams(2, 3, 2.0, 0.5)
    g = AxiGrid.build(2, 3, [("rho", graded_nodes(10, 16, 1.1)),
                             ("t", graded_nodes(10, 16, 1.1, mirror=True), True)])
    mask = boundary_mask(g, rho=("low", "high"), t="high")
    pb = QuotientProblem(g, mask, 2.0, P.q, P.sigma)
    u0 = np.where(mask, 0.0, np.exp(-g.mesh("rho") - g.mesh("t")) * g.mesh("rho"))
    res = {}
    for method in ("flow", "power", "lbfgs"):
        r = minimize(pb, u0, FlowOptions(max_iter=400, method=method))
        h = np.array(r.history)
        assert np.all(np.diff(h) <= 1e-12 * h[0])
        res[method] = r.J
    assert res["power"] == pytest.approx(res["lbfgs"], rel=1e-6)
    assert res["flow"] == pytest.approx(res["lbfgs"], rel=1e-4)


def test_abs_never_increases_quotient():
    P = ProblemParams(2, 3, 2.0, 0.5)
    g = _polar_grid(8)
    mask = boundary_mask(g, rho="high", t="high")
    rng = np.random.default_rng(1)
    u = rng.normal(size=g.shape)
    v = GridFunction.masked(g, u, mask)
    assert rayleigh_quotient(v.with_values(np.abs(v.values)), P) <= rayleigh_quotient(v, P)
