import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mazya_lab.core import GridFunction, ProblemParams
from mazya_lab.picone import (TestFamilySpec, cap_solution, localization_ratio, picone_chain,
                              random_bump, relative_young_gap, udelta_quotient, udelta_sweep,
                              wedge_test_grid, young_gap, young_sweep)
from mazya_lab.sphere_eig import CapGeometry, lambda_p_cap


def test_young_examples():
    assert young_gap(2.0, 1.0, 2.0) == 1.0
    assert young_gap(1.0, 2.0, 3.0) == pytest.approx(5.0, abs=1e-13)
    assert young_gap(1.7, 1.7, 4.2) == 0.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(1.01, 10.0))
def test_young_nonnegative(lr, lt, p):
    r, t = 10.0 ** lr, 10.0 ** lt
    assert relative_young_gap(r, t, p) >= -1e-12


def test_young_sweep_classification():
    s = young_sweep(20_000, seed=3)
    assert s.violations == 0 and s.misclassified == 0 and s.equal_pairs > 0


def test_young_rejects_bad_input():
    with pytest.raises(ValueError):
        young_gap(-1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        young_gap(1.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def wedge():
    cap = CapGeometry(3, math.pi / 3)
    res = lambda_p_cap(2.0, cap, 256)
    g = wedge_test_grid(3, 4, cap, 16)
    return cap, res, g, cap_solution(res, g)


def test_chain_zero(wedge):
    cap, res, g, U = wedge
    c = picone_chain(GridFunction(g, np.zeros(g.shape), U.mask), U, 2.0, res.lam)
    assert (c.lhs, c.mid, c.rhs) == (0.0, 0.0, 0.0)


def test_chain_ordering_random_bumps(wedge):
    cap, res, g, U = wedge
    rng = np.random.default_rng(0)
    box = {"rho": (0.6, 3.8), "theta": (0.0, 0.95 * cap.theta0), "t": (0.0, 2.8)}
    for _ in range(10):
        c = picone_chain(random_bump(g, rng, box), U, 2.0, res.lam)
        assert c.ordered()
        assert c.tol < 1e-2


def test_gap_localizes_on_cutoff_gradient(wedge):
    cap, res, g, U = wedge

    def ramp(x, a, b, c, d):
        s = np.clip((x - a) / (b - a), 0, 1) * np.clip((d - x) / (d - c), 0, 1)
        return s * s * (3 - 2 * s)
    rho, t = g.mesh("rho"), g.mesh("t")
    eta = ramp(rho, 0.7, 1.5, 2.8, 3.8) * ramp(t, -1.0, -0.5, 1.5, 2.8)
    u = GridFunction.masked(g, U.values * eta, U.mask)
    lam = res.lam

    def transition(r_, th_, t_):
        e = ramp(r_, 0.7, 1.5, 2.8, 3.8) * ramp(t_, -1.0, -0.5, 1.5, 2.8)
        return (e > 0) & (e < 1)
    assert localization_ratio(u, U, 2.0, lam, transition) > 0.9


def test_udelta_examples():
    spec = TestFamilySpec(0.1, 1.0, CapGeometry(2, math.pi / 2), ProblemParams(2, 3, 2.0, 0.0))
    sw = udelta_sweep(spec)
    gaps = [r.gap for r in sw["results"]]
    assert all(g > 0 for g in gaps)
    assert sw["monotone"]
    assert abs(sw["slope"] - 1) <= 0.3


def test_udelta_from_above_p3():
    cap = CapGeometry(3, math.pi / 2)
    prof = lambda_p_cap(3.0, cap, 256)
    prev = math.inf
    for d in (0.2, 0.1, 0.05, 0.025):
        r = udelta_quotient(TestFamilySpec(d, 1.0, cap, ProblemParams(3, 5, 3.0, 0.0)), prof)
        assert prof.lam < r.quotient < prev
        prev = r.quotient


def test_udelta_rejects_sigma():
    with pytest.raises(ValueError):
        TestFamilySpec(0.1, 1.0, CapGeometry(2, 1.0), ProblemParams(2, 3, 2.0, 0.5))
