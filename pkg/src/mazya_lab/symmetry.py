"""Symmetry and symmetry breaking of extremals.

Closed-form second-variation bound B(m, n, p, sigma) along h = u y1/|y| at a
y-radial critical point, the thresholds sigma_hat and p_hat, a quadrature of
the second differential, and the discrete decreasing rearrangement in |z|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .core.flow import FlowOptions, QuotientProblem, minimize
from .core.functionals import quad_points_for
from .core.grid import AxiGrid, GridFunction, boundary_mask
from .core.params import ProblemParams, sphere_area
from .sphere_eig import CapGeometry
from .wedge_extremal import ExtremalSolution, SolverOptions, WedgeDomain, minimize_quotient


def second_variation_bound(m, n, p, sigma) -> float:
    """(p/(p-m))^2 - p^2 sigma / ((m-1)(n - p sigma))."""
    if not p > m:
        raise ValueError("the Hardy step needs p > m")
    if not sigma * p < n:
        raise ValueError("need sigma * p < n")
    return (p / (p - m)) ** 2 - p * p * sigma / ((m - 1) * (n - p * sigma))


@dataclass(frozen=True)
class SigmaHat:
    value: float
    bisection: float
    admissible: bool      # sigma_hat < min(1, n/p): the breaking window is non-empty
    upper: float          # min(1, n/p)

    def __float__(self):
        return self.value


def sigma_hat(m, n, p, xtol=1e-13) -> SigmaHat:
    if not p > m:
        raise ValueError("sigma_hat needs p > m")
    closed = n * (m - 1) / ((p - m) ** 2 + p * (m - 1))
    top = n / p
    # B decreases from (p/(p-m))^2 > 0 at 0 to -inf as sigma -> n/p
    hi = top * (1 - 1e-15)
    while second_variation_bound(m, n, p, hi) > 0:   # pragma: no cover - guarded by the limit
        hi = 0.5 * (hi + top)
    bis = bisect(lambda s: second_variation_bound(m, n, p, s), 0.0, hi, xtol=xtol,
                 rtol=4 * np.finfo(float).eps, maxiter=500)
    up = min(1.0, n / p)
    return SigmaHat(closed, bis, closed < up, up)


def p_hat(m, n, xtol=1e-13) -> float:
    """Upper-bound threshold: inf of p in (m, n) with (p-m)^2 > (m-1)(n-p)."""
    if not 2 <= m <= n - 1:
        raise ValueError("need 2 <= m <= n-1")
    g = lambda p: (p - m) ** 2 - (m - 1) * (n - p)
    return bisect(g, m, n, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class SymmetryBreakingQuery:
    m: int
    n: int
    p: float
    sigma: float
    bound: float
    sigma_hat: float
    p_hat: float
    breaking: bool        # B < 0 and sigma inside the admissible window

    @classmethod
    def of(cls, m, n, p, sigma):
        B = second_variation_bound(m, n, p, sigma)
        sh = sigma_hat(m, n, p)
        return cls(m, n, p, sigma, B, sh.value, p_hat(m, n),
                   bool(B < 0 and sigma < sh.upper))


# -- second differential ----------------------------------------------------------

@dataclass
class SecondVariation:
    d2J: float
    J: float
    bound: float            # B(m, n, p, sigma)
    cross: float            # relative size of the odd cross term
    hessian_terms: dict
    theta_points: int

    @property
    def sharp_bound(self) -> float:
        """(m-1)/m J B: the bound the Hoelder/Hardy chain delivers for this h."""
        return self.hessian_terms["m_factor"] * self.J * self.bound


def _radial_values(u: GridFunction, tol=1e-10):
    g = u.grid
    if "theta" in g.names:
        i = g.index("theta")
        v = u.values
        spread = np.max(np.ptp(v, axis=i))
        if spread > tol * max(np.max(np.abs(v)), 1e-300):
            raise ValueError(f"profile is not radial in y (angular variation {spread:.3e})")
        axes = [a for a in g.axes if a.name != "theta"]
        rg = AxiGrid(axes, g.m, g.n, g.ngauss)
        return rg, np.take(v, 0, axis=i), np.take(u.mask, 0, axis=i)
    if "rho" not in g.names:
        raise ValueError("need a polar grid")
    return g, u.values, u.mask


def second_variation_numeric(u: GridFunction, params: ProblemParams, n_theta=16,
                             eta=1e-12) -> SecondVariation:
    """d^2 J(u; h) with h = u cos(theta) = u y1/|y| by direct quadrature of the
    second differential: Gauss in (rho, t), Gauss-Legendre in theta."""
    g, v, mask = _radial_values(u)
    m, p, q, sigma = params.m, params.p, params.q, params.sigma
    if m != g.m or params.n != g.n:
        raise ValueError("grid dimensions do not match the parameters")
    xk, wk = np.polynomial.legendre.leggauss(n_theta)
    th = 0.5 * math.pi * (xk + 1)
    wth = 0.5 * math.pi * wk * np.sin(th) ** (m - 2) * sphere_area(m - 2)
    c, s = np.cos(th), np.sin(th)
    # (rho, t) Gauss data; the y-radial grid weights carry |S^{m-1}|, swap for the theta rule
    wg = g.gauss_weights / sphere_area(m - 1)
    ug = g.at_gauss(v)
    g2, gs = g.grad_sq_at_gauss(v)
    rho = g.gauss_coords("rho")
    # |grad h|^2 = cos^2 |grad u|^2 + u^2 sin^2 / rho^2 ;  <grad u, grad h> = cos |grad u|^2
    a = (g2 + eta) ** ((p - 4) / 2)
    i1 = 0.0
    for ck, sk, wt in zip(c, s, wth):
        gh2 = ck * ck * g2 + ug * ug * sk * sk / rho ** 2
        guh = ck * g2
        i1 += wt * float(np.sum(wg * a * ((p - 2) * guh ** 2 + g2 * gh2)))
    # q-terms with the singular-adapted rule in (rho, t)
    quad = g.quadrature(quad_points_for(q), (sigma - 1.0) * q)
    quad.check_support(v)
    uq = quad.at(v)
    W = quad.weights / sphere_area(m - 1)
    cross_terms = np.array([wt * ck * float(np.sum(W * np.abs(uq) ** (q - 2) * uq * uq))
                            for ck, wt in zip(c, wth)])
    cross = float(np.sum(cross_terms))
    scale = float(np.sum(np.abs(cross_terms))) or 1.0
    A = float(sum(wt * ck * ck for ck, wt in zip(c, wth)) * np.sum(W * np.abs(uq) ** q))
    S = float(np.sum(W * np.abs(uq) ** q) * np.sum(wth))
    E = float(np.sum(wth)) * float(np.sum(wg * (g2 + eta) ** (p / 2)))
    J = E ** (1 / p) / S ** (1 / q)
    # normalise to S = 1 (the formula assumes it); d^2 J is 0-homogeneous in u
    lam = S ** (-1 / q)
    i1 *= lam ** p
    A *= lam ** q
    cross *= lam ** q
    Jp = J ** p
    d2 = (i1 - Jp * ((p - q) * cross ** 2 + (q - 1) * A)) / J ** (p - 1)
    B = second_variation_bound(m, params.n, p, sigma)
    terms = {"I1": i1, "A": A, "E": E * lam ** p, "m_factor": (m - 1) / m}
    return SecondVariation(d2, J, B, abs(cross) * lam ** -q / scale, terms, n_theta)


def radial_profile(params: ProblemParams, Ry=20.0, Rz=20.0, n_rho=64, n_t=64, ratio=1.08,
                   opts: SolverOptions = None) -> tuple:
    """Minimizer of J over functions u(|y|, |z|) on R^n minus P (truncated)."""
    dom = WedgeDomain.build(params.m, params.n, CapGeometry.full(params.m), Ry, Rz,
                            n_rho=n_rho, n_t=n_t, ratio=ratio, radial=True)
    opts = opts or SolverOptions(n_starts=1, max_iter=400)
    return minimize_quotient(params, dom, opts), dom


@dataclass
class TwoSolutionsReport:
    J_radial: float
    J_radial_3d: float        # same profile evaluated on the angular grid
    J_perturbed: float        # J(u + tau h)
    J_descent: float          # after descent from u + tau h in the full class
    tau: float
    strict: bool


def two_solutions_check(params: ProblemParams, sol: ExtremalSolution, n_theta=16,
                        taus=(0.4, 0.2, 0.1, 0.05), descent_iter=40) -> TwoSolutionsReport:
    """Radial-class value versus the unrestricted class on the matched grid with
    an angular axis over the full sphere."""
    g = sol.profile.grid
    th = np.linspace(0.0, math.pi, n_theta + 1)
    g3 = AxiGrid.build(g.m, g.n, [("rho", g.axis("rho").nodes), ("theta", th),
                                  ("t", g.axis("t").nodes, True)])
    mask = boundary_mask(g3, rho=("low", "high"), t="high")
    u3 = np.broadcast_to(sol.profile.values[:, None, :], g3.shape).copy()
    pb = QuotientProblem(g3, mask, params.p, params.q, params.sigma)
    J3 = pb.J(u3)
    h = u3 * np.cos(g3.node_coords("theta"))
    best, tb = math.inf, float("nan")
    for tau in taus:
        Jt = pb.J(u3 + tau * h)
        if Jt < best:
            best, tb = Jt, tau
    res = minimize(pb, u3 + tb * h, FlowOptions(max_iter=descent_iter))
    Jd = min(res.J, best)
    return TwoSolutionsReport(sol.mu, J3, best, Jd, tb, bool(Jd < J3 * (1 - 1e-9)))


# -- rearrangement in |z| -----------------------------------------------------------

@dataclass
class Rearranged:
    function: GridFunction
    exact: bool     # equal-measure cells: a permutation per fiber


def rearrange_z(v: GridFunction) -> Rearranged:
    """Decreasing rearrangement in t along every fibre of the remaining axes.

    Free t nodes of equal dual-cell measure are permuted (sorted decreasing),
    so every nodal weighted norm with a fibre-constant |y| factor is preserved
    exactly.  Unequal measures fall back to the measure-space rearrangement."""
    g = v.grid
    if "t" not in g.names:
        raise ValueError("grid has no t axis")
    if np.any(v.values < 0):
        raise ValueError("rearrangement needs v >= 0")
    i = g.index("t")
    vals = np.moveaxis(np.array(v.values), i, -1)
    mk = np.moveaxis(np.asarray(v.mask), i, -1)
    meas = g.axis("t").lumped()
    out = vals.copy()
    exact = True
    flat_v = vals.reshape(-1, vals.shape[-1])
    flat_m = mk.reshape(-1, mk.shape[-1])
    flat_o = out.reshape(-1, out.shape[-1])
    for k in range(flat_v.shape[0]):
        free = np.flatnonzero(~flat_m[k])
        if free.size == 0:
            continue
        if free[0] != 0 or np.any(np.diff(free) != 1):
            raise ValueError("free t nodes must form an initial segment of each fibre")
        mu = meas[free]
        f = flat_v[k, free]
        if np.allclose(mu, mu[0], rtol=1e-12, atol=0):
            flat_o[k, free] = np.sort(f)[::-1]
        else:
            exact = False
            flat_o[k, free] = _measure_rearrangement(f, mu)
    out = np.moveaxis(out, -1, i)
    return Rearranged(GridFunction(g, out, v.mask), exact)


def _measure_rearrangement(f, mu):
    """Average of the decreasing rearrangement (as a step function of the
    cumulative measure) over each target cell; preserves the integral."""
    order = np.argsort(-f, kind="stable")
    fs, ms = f[order], mu[order]
    src_edges = np.concatenate([[0.0], np.cumsum(ms)])
    dst_edges = np.concatenate([[0.0], np.cumsum(mu)])
    F = np.concatenate([[0.0], np.cumsum(fs * ms)])   # integral of the step function
    Fd = np.interp(dst_edges, src_edges, F)
    return np.diff(Fd) / mu


@dataclass
class RearrangementCheck:
    norm_errors: dict       # relative change of nodal weighted norms, keyed by exponent
    idempotency: float      # max |R(R v) - R v| / max |v|
    energy_ratio: float     # E(R v) / E(v) - 1 (<= 0 up to discretization)
    exact: bool


def nodal_norm(v: GridFunction, s: float, y_power: float = 0.0) -> float:
    """(sum_nodes w |y|^{y_power} |v|^s)^{1/s} with lumped weights."""
    w = v.grid.lumped_weights(y_power)
    return float(np.sum(w * np.abs(v.values) ** s)) ** (1.0 / s)


def rearrangement_check(v: GridFunction, params: ProblemParams) -> RearrangementCheck:
    from .core.functionals import dirichlet_energy
    r = rearrange_z(v)
    a = -(1.0 - params.sigma) * params.q
    errs = {}
    for label, s, yp in (("q_weighted", params.q, a), ("p", params.p, 0.0), ("1", 1.0, 0.0),
                         ("2_weighted", 2.0, -1.0)):
        n0, n1 = nodal_norm(v, s, yp), nodal_norm(r.function, s, yp)
        errs[label] = abs(n1 - n0) / n0
    rr = rearrange_z(r.function)
    scale = float(np.max(np.abs(v.values)))
    idem = float(np.max(np.abs(rr.function.values - r.function.values))) / scale
    e0 = dirichlet_energy(v, params.p)
    e1 = dirichlet_energy(r.function, params.p)
    return RearrangementCheck(errs, idem, e1 / e0 - 1.0, r.exact)


def smooth_corpus(grid: AxiGrid, mask, rng, count=10, lumps=3):
    """Seeded nonnegative smooth functions: sums of Gaussian lumps in (rho, t)
    modulated by 1 + a cos(theta), vanishing on the mask."""
    coords = {nm: grid.mesh(nm) for nm in grid.names}
    rmax = grid.axis("rho").nodes[-1]
    tmax = grid.axis("t").nodes[-1]
    out = []
    for _ in range(count):
        u = np.zeros(grid.shape)
        for _ in range(lumps):
            rc, tc = rng.uniform(0.1, 0.5) * rmax, rng.uniform(-0.4, 0.4) * tmax
            w = rng.uniform(0.05, 0.2) * min(rmax, tmax)
            lump = np.exp(-((coords["rho"] - rc) ** 2 + (coords["t"] - tc) ** 2) / (2 * w * w))
            if "theta" in coords:
                lump = lump * (1.0 + rng.uniform(0, 0.9) * np.cos(coords["theta"]))
            u += rng.uniform(0.5, 2.0) * lump
        out.append(GridFunction.masked(grid, u, mask))
    return out
