"""End-to-end acceptance checks, one test per criterion, each printing a verdict line."""

import math
import time

import numpy as np
import pytest

from mazya_lab import cli
from mazya_lab.boundary_asymptotics import (
    BoundaryProfile, attainability, average_f, average_f2, compute_A1, compute_A2,
    far_field_radius,
)
from mazya_lab.core import AxiGrid, ProblemParams, boundary_mask, sphere_area
from mazya_lab.halfspace import fit_asymptotics, kelvin_check
from mazya_lab.picone import TestFamilySpec, picone_sweep, udelta_sweep, young_sweep
from mazya_lab.sphere_eig import CapGeometry, lambda_p_cap, lambda_p_cap_extrapolated
from mazya_lab.symmetry import (
    p_hat, radial_profile, rearrangement_check, second_variation_bound,
    second_variation_numeric, sigma_hat, smooth_corpus,
)
from mazya_lab.wedge_extremal import Region, SolverOptions, WedgeDomain, perturbed_compare


def test_c01_full_sphere_exact(verdict):
    rows, ok = [], True
    for m in (3, 4, 5):
        t0 = time.perf_counter()
        val, _, _ = lambda_p_cap_extrapolated(2.0, CapGeometry.full(m), 64)
        dt = time.perf_counter() - t0
        err = abs(val - ((m - 2) / 2) ** 2)
        ok &= err < 1e-6 and dt < 1.0
        rows.append(f"m={m} err={err:.1e} {dt:.2f}s")
    verdict(1, "full-sphere eigenvalues", ok, "; ".join(rows))


def test_c02_hemisphere_and_arcs(verdict):
    t0 = time.perf_counter()
    hemi = lambda_p_cap(2.0, CapGeometry(3, math.pi / 2)).lam
    errs = [abs(hemi / 2.25 - 1)]
    for th in (math.pi / 4, math.pi / 2):
        errs.append(abs(lambda_p_cap(2.0, CapGeometry(2, th)).lam / (math.pi / (2 * th)) ** 2 - 1))
    dt = time.perf_counter() - t0
    verdict(2, "hemisphere and arcs", max(errs) < 0.01 and dt < 10,
            f"hemisphere {hemi:.6f}, max rel err {max(errs):.1e}, {dt:.2f}s")


def test_c03_young(verdict):
    s = young_sweep(100_000, seed=0)
    verdict(3, "Young inequality", s.min_gap >= -1e-12 and s.misclassified == 0,
            f"min relative gap {s.min_gap:.2e}, misclassified {s.misclassified}, "
            f"equal pairs {s.equal_pairs}")


@pytest.mark.parametrize("m,n,p,theta0", [(3, 4, 2.0, math.pi / 3)])
def test_c04_picone_chain(verdict, m, n, p, theta0):
    sw = picone_sweep(m, n, p, CapGeometry(m, theta0), cells=(32, 64), bumps=100, seed=0)
    ok = sw.violations[-1] == 0 and sw.max_tol[-1] <= 1e-2 and sw.shrink >= 2
    verdict(4, "Picone chain", ok,
            f"violations {sw.violations}, max tol {sw.max_tol[0]:.1e} -> {sw.max_tol[1]:.1e}, "
            f"shrink {sw.shrink:.1f}x")


def test_c05_nonattainment_signature(verdict):
    rows, ok = [], True
    for m, n, p, th in ((2, 3, 2.0, math.pi / 2), (3, 5, 3.0, math.pi / 2), (3, 4, 2.0, math.pi / 3)):
        spec = TestFamilySpec(0.1, 1.0, CapGeometry(m, th), ProblemParams(m, n, p, 0.0))
        sw = udelta_sweep(spec, (0.2, 0.1, 0.05))
        gaps = [r.gap for r in sw["results"]]
        ok &= all(g > 0 for g in gaps) and abs(sw["slope"] - 1) <= 0.3
        rows.append(f"(m,n,p)=({m},{n},{p:g}) slope {sw['slope']:.3f}")
    verdict(5, "non-attainment signature", ok, "; ".join(rows))


def test_c06_symmetry_breaking(verdict):
    sh = sigma_hat(2, 3, 4)
    B = second_variation_bound(2, 3, 4, 0.5)
    ph = p_hat(2, 10)
    P = ProblemParams(2, 3, 4.0, 0.6)
    sv = {}
    for k in (32, 48):
        sol, _ = radial_profile(P, n_rho=k, n_t=k)
        sv[k] = second_variation_numeric(sol.profile, P)
    fine = sv[48]
    tol = abs(fine.d2J - sv[32].d2J) + abs(fine.J * fine.bound - sv[32].J * sv[32].bound)
    parts = {
        "sigma_hat": abs(sh.value - 0.375) < 1e-10 and abs(sh.value - sh.bisection) < 1e-10,
        "bound": B == -4.0,
        "negative": fine.d2J < 0,
        "below J*B": fine.d2J <= fine.J * fine.bound + tol,
        "p_hat": abs(ph - (3 + math.sqrt(33)) / 2) < 1e-8,
    }
    failed = [k for k, v in parts.items() if not v]
    verdict(6, "symmetry breaking", not failed,
            f"d2J {fine.d2J:.4f}, J*B {fine.J * fine.bound:.4f} (tol {tol:.1e}), "
            f"(m-1)/m J*B {fine.sharp_bound:.4f}; failed: {failed or 'none'}")


def test_c07_halfspace_profile(verdict, halfspace96):
    sol = halfspace96
    fit = fit_asymptotics(sol)
    kel = kelvin_check(sol)
    parts = {
        "residual": sol.converged and sol.residual < 1e-3,
        "near": abs(fit.near_exponent - 1) <= 0.1,
        "far": abs(fit.far_exponent + (sol.n - 1)) <= 0.3,
        "M spread": fit.M_spread < 10,
        "Kelvin": kel.involution_error < 1e-6,
        "runtime": sol.solve_seconds < 600,
    }
    failed = [k for k, v in parts.items() if not v]
    verdict(7, "half-space profile", not failed,
            f"mu_q {sol.mu_q:.5f}, residual {sol.residual:.1e}, near {fit.near_exponent:.3f}, "
            f"far {fit.far_exponent:.3f}, M {fit.M:.4f} spread {fit.M_spread:.2f}, "
            f"Kelvin {kel.involution_error:.1e}, solve {sol.solve_seconds:.0f}s")


def test_c08_sphere_averages(verdict):
    F = BoundaryProfile.quadratic(2, 4, A=-np.eye(1))
    f, f2 = float(average_f(F, 1.0)), float(average_f2(F, 1.0))
    verdict(8, "sphere averages", abs(f + 1 / 3) < 1e-8 and abs(f2 - 4 / 3) < 1e-8,
            f"f {f:.12f}, f2 {f2:.12f}")


@pytest.fixture(scope="module")
def subcritical_report(halfspace96):
    F = BoundaryProfile.quadratic(2, 3, A=-np.eye(1))
    return attainability(halfspace96, F, [2.0 ** -k for k in range(3, 8)])


def test_c09_attainability(verdict, subcritical_report):
    rep = subcritical_report
    gap = rep.expansion_gap()
    ok = (rep.variation1 < 0.05 and rep.variation2 < 0.05 and rep.quotient[-1] < rep.mu_sq
          and gap < 0.05)
    verdict(9, "attainability pipeline", ok,
            f"ratio1 var {rep.variation1:.2%}, ratio2 var {rep.variation2:.2%}, "
            f"quotient {rep.quotient[-1]:.5f} vs mu^2 {rep.mu_sq:.5f}, expansion gap {gap:.1e}")


def test_c10_critical_regime(verdict, halfspace96):
    sol = halfspace96
    G = BoundaryProfile.critical_power(2, 3)
    delta = 0.25
    R, _ = far_field_radius(sol)
    target = -sol.M ** 2 * sphere_area(sol.n - 2)

    def normalized(eps):
        return compute_A2(sol, G, eps, delta, R=R).value / (eps ** sol.n * math.log(delta / eps))
    # A1 needs the cut-off support delta/eps inside the stored box: eps >= 2^-7 here
    grid_eps = [2.0 ** -k for k in range(3, 8)]
    growth = [abs(compute_A2(sol, G, e, delta, R=R).value / compute_A1(sol, G, e, delta))
              for e in grid_eps]
    monotone = all(b > a for a, b in zip(growth, growth[1:]))
    # A2 only uses the stored data inside R and the far-field law beyond it, so the
    # slow 1/ln(delta/eps) approach can be followed to small eps
    deep = [normalized(2.0 ** -k) / target for k in (18, 19, 20)]
    stable = max(abs(r - 1) for r in deep) <= 0.1 and (max(deep) - min(deep)) / np.mean(deep) < 0.1
    shallow = [normalized(e) / target for e in grid_eps[-3:]]
    verdict(10, "critical regime", monotone and stable,
            f"|A2/A1| {', '.join(f'{g:.1f}' for g in growth)}; A2/(eps^n ln) / (-M^2 w) at "
            f"2^-5..2^-7: {', '.join(f'{r:.3f}' for r in shallow)}, at 2^-18..2^-20: "
            f"{', '.join(f'{r:.3f}' for r in deep)}")


def test_c11_rearrangement(verdict):
    n = 32
    g = AxiGrid.build(2, 3, [("rho", np.linspace(0, 4, n + 1)),
                             ("theta", np.linspace(0, math.pi, 17)),
                             ("t", (np.arange(n + 1) + 0.5) * 4 / n, True)])
    mask = boundary_mask(g, rho="high", t="high")
    P = ProblemParams(2, 3, 2.0, 0.5)
    checks = [rearrangement_check(v, P) for v in smooth_corpus(g, mask, np.random.default_rng(0), 20)]
    norm_err = max(max(c.norm_errors.values()) for c in checks)
    idem = max(c.idempotency for c in checks)
    energy = max(c.energy_ratio for c in checks)
    verdict(11, "rearrangement invariants", norm_err < 1e-10 and idem == 0 and energy <= 1e-3,
            f"norm err {norm_err:.1e}, idempotency {idem:.1e}, max energy change {energy:.2e}")


def test_c12_perturbed_wedge(verdict):
    P = ProblemParams(2, 3, 2.0, 0.5)
    dom = WedgeDomain.build(2, 3, CapGeometry(2, math.pi / 4), 20, 20, 32, 8, 32, 1.1,
                            theta_max=math.pi / 2)
    opts = SolverOptions(n_starts=1)
    over = perturbed_compare(P, dom, Region((0.3, 3.0), (math.pi / 4 - 0.1, math.pi / 2), (0.0, 2.0)),
                             opts)
    apart = perturbed_compare(P, dom, Region((0.3, 3.0), (1.2, math.pi / 2), (0.0, 2.0)), opts)
    ok = (over.mu_perturbed < over.mu_base and over.gap > 5 * over.grid_error
          and apart.mu_perturbed == apart.mu_base)
    verdict(12, "perturbed wedge", ok,
            f"gap {over.gap:.4f} vs grid error {over.grid_error:.1e}, "
            f"disjoint gap {apart.mu_base - apart.mu_perturbed:.1e}")


CONFIG = """
[check-young]
samples = 20000

[sphere-eig]
m = 3
theta0 = pi/2

[udelta-sweep]
m = 2
n = 3

[wedge-extremal]
n_rho = 16
n_theta = 4
n_t = 16
n_starts = 2
"""


def test_c13_reproducibility(verdict, tmp_path, monkeypatch):
    monkeypatch.delenv(cli.ENV_OUT, raising=False)
    cfg = tmp_path / "lab.ini"
    cfg.write_text(CONFIG)
    same, codes = [], []
    for cmd in ("check-young", "sphere-eig", "udelta-sweep", "wedge-extremal"):
        dirs = [tmp_path / f"{cmd}-{k}" for k in (0, 1)]
        for d in dirs:
            codes.append(cli.run([cmd, "--config", str(cfg), "--out", str(d), "--reproducible"]))
        names = sorted(p.name for p in dirs[0].glob("*.csv"))
        same.append(bool(names) and all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes()
                                        for f in names))
    verdict(13, "reproducibility", all(same) and not any(codes),
            f"{sum(same)}/{len(same)} commands byte-identical, exit codes {sorted(set(codes))}")
