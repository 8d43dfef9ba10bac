import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mazya_lab.boundary_asymptotics import (
    BoundaryProfile, GridSupportError, assemble_quotient, average_f, average_f1, average_f2,
    compute_A1, compute_A2, direct_bent_quotient, fubini_f, hypothesis_report,
    jacobian_determinant, phi_beta, rvf_ratio_check, sphere_moment,
)


def neg_yp_sq(m, n):
    return BoundaryProfile.quadratic(m, n, A=-np.eye(m - 1))


def test_sphere_averages_closed_forms():
    F = neg_yp_sq(2, 4)
    assert average_f(F, 1.0) == pytest.approx(-1 / 3, abs=1e-8)
    assert average_f2(F, 1.0) == pytest.approx(4 / 3, abs=1e-8)
    G = BoundaryProfile.quadratic(2, 4, B=np.eye(2))
    assert average_f(G, 1.0) == pytest.approx(2 / 3, abs=1e-8)
    P = BoundaryProfile.power(2, 4, c=1.0, alpha_y=2.0)
    assert average_f(P, 1.0) == pytest.approx(-1 / 3, abs=1e-12)
    assert average_f(P, 1.0, method="quadrature") == pytest.approx(-1 / 3, abs=1e-8)


def test_zero_profile_averages():
    Z = BoundaryProfile.zero(2, 4)
    assert average_f(Z, 0.5) == 0 and average_f2(Z, 0.5) == 0 and average_f1(Z, 0.3, 0.2) == 0


def test_linear_profile_has_constant_gradient():
    F = BoundaryProfile.from_callable(3, 5, lambda yp, z: 0.3 * yp[..., 0], alpha=1.0)
    vals = average_f2(F, np.array([0.1, 0.4, 0.9]))
    assert np.allclose(vals, 0.09, atol=1e-10)


def test_f1_of_yp_square_is_exact():
    F = neg_yp_sq(3, 5)
    r, t = np.array([0.1, 0.5, 0.9]), np.array([0.7, 0.2, 0.0])
    assert np.allclose(average_f1(F, r, t), -r ** 2, atol=1e-13)


@pytest.mark.parametrize("m,n", [(2, 4), (3, 5), (2, 3)])
def test_fubini_reconstructs_f(m, n):
    F = BoundaryProfile.quadratic(m, n, A=-np.eye(m - 1), B=0.4 * np.eye(n - m))
    rho = np.array([0.2, 0.6])
    assert np.allclose(fubini_f(F, rho), average_f(F, rho), rtol=1e-8)


def test_moments_match_coordinate_square_mean():
    # mean of a coordinate square over the unit sphere of R^{n-1} is 1/(n-1)
    for m, n in ((2, 4), (3, 6)):
        assert sphere_moment(m, n, 2, 0) == pytest.approx((m - 1) / (n - 1), rel=1e-12)
        assert sphere_moment(m, n, 0, 2) == pytest.approx((n - m) / (n - 1), rel=1e-12)


def test_hypothesis_report_concave_profile():
    rep = hypothesis_report(neg_yp_sq(2, 4), (0.01, 0.5))
    assert rep.average_concave and rep.eq11_bounded and rep.eq4_holds and rep.directional_concave
    rho = np.asarray(rep.rho)
    assert np.allclose(rep.eq4_values, -4 * rho, rtol=1e-8)
    beta = np.linspace(0, math.pi / 2, 17)
    assert np.allclose(rep.Phi, 3 * np.cos(beta) ** 2, atol=1e-8)
    assert rep.theorem == "subcritical attainability"


def test_hypothesis_report_convex_in_z():
    rep = hypothesis_report(BoundaryProfile.quadratic(2, 4, B=np.eye(2)), (0.01, 0.5))
    assert not rep.average_concave and rep.theorem == "none"


def test_cubic_quartic_profile_is_average_concave_near_zero():
    F = BoundaryProfile.from_callable(3, 4, lambda yp, z: yp[..., 0] ** 3 - yp[..., 1] ** 4,
                                      alpha=4.0)
    assert np.all(average_f(F, np.geomspace(1e-3, 0.3, 8)) < 0)


def test_phi_beta_converges_for_quadratic():
    est = phi_beta(neg_yp_sq(2, 3), np.linspace(0, math.pi / 2, 5))
    assert est.converged
    assert np.allclose(est.values, 2 * np.cos(est.beta) ** 2, atol=1e-8)


def test_profile_invariant_violation_reported():
    F = BoundaryProfile.quadratic(2, 4, A=-np.eye(1), B=-np.eye(2))
    inv = F.check_invariants(0.5)
    assert not all(v for v in inv.values() if isinstance(v, bool))


def test_rvf_exact_power():
    chk = rvf_ratio_check(lambda r: -r ** 2.5, 0.5, 2.0 ** -np.arange(2, 8))
    assert np.allclose(chk.ratios, 0.5 ** 2.5, rtol=1e-14)
    assert chk.fitted_alpha == pytest.approx(2.5, abs=1e-12)


def test_rvf_slowly_varying_washes_out():
    chk = rvf_ratio_check(lambda r: -r ** 2 * np.log(1 / r), 0.5, 10.0 ** -np.arange(2, 40, 6))
    err = np.abs(chk.ratios - 0.25)
    assert np.all(np.diff(err) < 0) and err[-1] < 0.01 * 0.25


def test_rvf_regression_recovers_declared_order():
    for alpha, k in ((2.0, 0.0), (3.0, 1.0), (4.0, -0.5)):
        F = BoundaryProfile.power(2, 3, c=1.0, alpha_y=alpha, slowly_varying=f"logPower({k})")
        chk = rvf_ratio_check(F, 0.5, 2.0 ** -np.arange(40, 60))
        assert chk.fitted_alpha == pytest.approx(alpha, abs=0.05)


def test_rvf_rejects_bad_t():
    with pytest.raises(ValueError):
        rvf_ratio_check(lambda r: r, 1.0, [0.1])


def test_jacobian_is_eps_power():
    F = BoundaryProfile.quadratic(2, 4, A=-np.eye(1), B=0.5 * np.eye(2))
    x = np.random.default_rng(0).uniform(-0.2, 0.2, (6, 4))
    for eps in (0.5, 0.1):
        assert np.allclose(jacobian_determinant(F, eps, x), eps ** -4, rtol=1e-7)


# -- quadratures on the stored half-space solution ---------------------------------------

EPS = (0.1, 0.05)


def test_zero_profile_gives_zero_corrections(halfspace_small):
    Z = BoundaryProfile.zero(2, 3)
    assert compute_A1(halfspace_small, Z, 0.1) == 0.0
    assert compute_A2(halfspace_small, Z, 0.1).value == 0.0
    mu2 = halfspace_small.mu_q ** 2
    assert assemble_quotient(mu2, 0.0, 0.0, halfspace_small.q) == mu2


def test_direct_quotient_of_flat_profile_is_mu_sq(halfspace_small):
    mu2 = halfspace_small.mu_q ** 2
    # only the cut-off perturbs the straight quotient; it fades as delta/eps fills the box
    Z = BoundaryProfile.zero(2, 3)
    dev = [direct_bent_quotient(halfspace_small, Z, e).quotient / mu2 - 1
           for e in (0.05, 0.025, 0.0125)]
    assert dev[0] > dev[1] > dev[2] > 0
    assert dev[2] < 2e-3


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_corrections_linear_in_profile(halfspace_small, a, b):
    sol = halfspace_small
    F, G = neg_yp_sq(2, 3), BoundaryProfile.quadratic(2, 3, A=np.eye(1), B=np.eye(1))
    H = BoundaryProfile.quadratic(2, 3, A=-a * np.eye(1) + b * np.eye(1), B=b * np.eye(1))
    for fn in (compute_A1, lambda s, P, e: compute_A2(s, P, e).value):
        lhs = fn(sol, H, 0.1)
        rhs = a * fn(sol, F, 0.1) + b * fn(sol, G, 0.1)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)


def test_signs_for_concave_profile(halfspace_small):
    F = neg_yp_sq(2, 3)
    for e in EPS:
        assert compute_A1(halfspace_small, F, e) < 0
        assert compute_A2(halfspace_small, F, e).value < 0
    mu2 = halfspace_small.mu_q ** 2
    A1, A2 = compute_A1(halfspace_small, F, 0.05), compute_A2(halfspace_small, F, 0.05).value
    assert assemble_quotient(mu2, A1, A2, halfspace_small.q) < mu2
    assert direct_bent_quotient(halfspace_small, F, 0.05).quotient < \
        direct_bent_quotient(halfspace_small, F.scaled(0.0), 0.05).quotient


def test_support_check(halfspace_small):
    with pytest.raises(GridSupportError):
        compute_A1(halfspace_small, neg_yp_sq(2, 3), 0.001)


def test_regime_must_match_order(halfspace_small):
    with pytest.raises(ValueError):
        compute_A2(halfspace_small, neg_yp_sq(2, 3), 0.1, regime="critical")


def test_critical_rejects_convergent_integral(halfspace_small):
    F = BoundaryProfile.power(2, 3, c=1.0, alpha_y=4.0, alpha=4.0, slowly_varying="logPower(-2)")
    with pytest.raises(ValueError):
        compute_A2(halfspace_small, F, 0.1)
