"""Extremals of the quotient J on truncated wedges K x R^{n-m}.

Functions live in the symmetric class V(rho, theta, t) on a polar wedge grid,
or V(rho, t) for the y-radial class.  Bumps (added regions) and obstacles
(removed regions) are axisymmetric boxes in (rho, theta, t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .core.flow import FlowOptions, QuotientProblem, minimize
from .core.functionals import norm_weights
from .core.grid import AxiGrid, GridFunction, graded_nodes
from .core.params import Case, DomainKind, ProblemParams, admissibility_case
from .sphere_eig import CapGeometry, lambda_p_cap


class DiagnosticOutcome(RuntimeError):
    """Raised by callers that treat a diagnostic (e.g. concentration) as fatal."""


@dataclass(frozen=True)
class Region:
    """Closed box rho in [a, b], theta in [c, d], t in [e, f]."""
    rho: tuple
    theta: tuple
    t: tuple

    def __post_init__(self):
        for lo, hi in (self.rho, self.theta, self.t):
            if not lo < hi:
                raise ValueError("empty region")
        if self.rho[0] <= 0:
            raise ValueError("regions must stay away from the axis y = 0")

    def inside(self, rho, theta, t, strict=True):
        if strict:
            return ((rho > self.rho[0]) & (rho < self.rho[1]) & (theta > self.theta[0])
                    & (theta < self.theta[1]) & (t > self.t[0]) & (t < self.t[1]))
        return ((rho >= self.rho[0]) & (rho <= self.rho[1]) & (theta >= self.theta[0])
                & (theta <= self.theta[1]) & (t >= self.t[0]) & (t <= self.t[1]))


@dataclass(frozen=True, eq=False)
class WedgeDomain:
    cap: CapGeometry
    Ry: float
    Rz: float
    grid: AxiGrid
    bumps: tuple = ()
    obstacles: tuple = ()

    @property
    def radial(self) -> bool:
        return "theta" not in self.grid.names

    @classmethod
    def build(cls, m, n, cap, Ry=20.0, Rz=20.0, n_rho=48, n_theta=16, n_t=48, ratio=1.05,
              theta_max=None, bumps=(), obstacles=(), radial=False):
        rho = graded_nodes(Ry, n_rho, ratio)
        t = graded_nodes(Rz, n_t, ratio, mirror=True)
        if radial:
            if not cap.is_full_sphere:
                raise ValueError("the y-radial class needs the full cap")
            grid = AxiGrid.build(m, n, [("rho", rho), ("t", t, True)])
            return cls(cap, Ry, Rz, grid, (), ())
        top = cap.theta0
        for b in bumps:
            top = max(top, b.theta[1])
        if theta_max is not None:
            top = max(top, theta_max)
        top = min(top, math.pi)
        dth = cap.theta0 / n_theta
        k = int(math.ceil((top - 1e-12) / dth))
        th = np.arange(k + 1) * dth
        th[-1] = min(th[-1], math.pi)
        if th[-1] < top - 1e-12:
            th = np.append(th, top)
        grid = AxiGrid.build(m, n, [("rho", rho), ("theta", th), ("t", t, True)])
        return cls(cap, Ry, Rz, grid, tuple(bumps), tuple(obstacles))

    def with_regions(self, bumps=None, obstacles=None) -> "WedgeDomain":
        return WedgeDomain(self.cap, self.Ry, self.Rz, self.grid,
                           self.bumps if bumps is None else tuple(bumps),
                           self.obstacles if obstacles is None else tuple(obstacles))

    def domain_kind(self):
        # a proper cap (bumps included) misses the ray theta = pi, so the wedge
        # lies inside the complement of a ray wedge
        top = max([self.cap.theta0] + [b.theta[1] for b in self.bumps])
        if not self.cap.is_full_sphere and top <= math.pi:
            if top < math.pi or self.cap.theta0 == math.pi:
                return DomainKind.COMPLEMENT_OF_RAY_WEDGE
        return DomainKind.COMPLEMENT_OF_P

    def mask(self) -> np.ndarray:
        g = self.grid
        rho = g.mesh("rho")
        t = g.mesh("t")
        free = (rho > 0) & (rho < self.Ry * (1 - 1e-14)) & (t < self.Rz * (1 - 1e-14))
        if self.radial:
            return ~free
        th = g.mesh("theta")
        if self.cap.is_full_sphere:
            incap = np.ones(g.shape, bool)
        else:
            incap = th < self.cap.theta0 - 1e-12
        for b in self.bumps:
            incap |= b.inside(rho, th, t)
        for o in self.obstacles:
            incap &= ~o.inside(rho, th, t, strict=False)
        return ~(free & incap)


@dataclass
class SolverOptions:
    max_iter: int = 300
    tol: float = 1e-11
    n_starts: int = 5
    seed: int = 0
    method: str = "lbfgs"
    eta: float = 1e-12
    refresh: int = 1
    sigma0_diagnostic: bool = False
    concentration_threshold: float = 0.5
    basin_rtol: float = 1e-5

    def flow(self) -> FlowOptions:
        return FlowOptions(max_iter=self.max_iter, tol=self.tol, eta=self.eta,
                           method=self.method, refresh=self.refresh)


@dataclass(eq=False)
class ExtremalSolution:
    mu: float
    profile: GridFunction
    el_residual: float
    iterations: int
    converged: bool
    diagnostic: str = "converged"
    basins: list = field(default_factory=list)
    history: list = field(default_factory=list)
    mass_fractions: dict = field(default_factory=dict)
    q: float = float("nan")
    sigma: float = float("nan")
    p: float = float("nan")


def _check_params(params: ProblemParams, dom: WedgeDomain, opts: SolverOptions):
    if dom.grid.m != params.m or dom.grid.n != params.n:
        raise ValueError("grid dimensions do not match the parameters")
    if admissibility_case(params, dom.domain_kind()) is Case.INADMISSIBLE:
        raise ValueError("(p, sigma) is inadmissible for this wedge")
    if params.sigma == 0.0 and not opts.sigma0_diagnostic:
        raise ValueError("sigma = 0 is the non-attainment regime; request the diagnostic mode")
    if params.p >= params.m and dom.cap.is_full_sphere and not dom.radial and params.sigma == 0:
        raise ValueError("p >= m needs a cone different from R^m")


def smooth_start(params: ProblemParams, dom: WedgeDomain, L=1.0, Lt=1.0, inner=0.05):
    """Separable initial guess: cap profile x radial power bump x Gaussian in t."""
    g = dom.grid
    m, p = params.m, params.p
    rho = g.node_coords("rho")
    t = g.node_coords("t")
    gam = 1.0 - m / p
    s = rho / L
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(rho > 0, s ** gam, 0.0) * (rho / inner) ** 2 / (1 + (rho / inner) ** 2)
    radial = radial * np.exp(-s ** 2)
    u = radial * np.exp(-(t / Lt) ** 2)
    if not dom.radial:
        th = g.node_coords("theta")
        if dom.cap.is_full_sphere:
            V = np.ones_like(th)
        else:
            try:
                res = lambda_p_cap(p, dom.cap, 64)
                V = np.clip(res.interpolant()(np.minimum(th, dom.cap.theta0)), 0, None)
            except Exception:
                V = np.cos(np.pi * np.minimum(th, dom.cap.theta0) / (2 * dom.cap.theta0))
        u = u * V
    return np.broadcast_to(u, g.shape).copy()


def dyadic_mass(grid, mask, u, sigma, q):
    """Fractions of the weighted q-mass in |x| < 2 r0 (innermost dyadic ball)
    and in the outermost dyadic shell, r0 = first positive radial node."""
    W = norm_weights(grid, mask, sigma, q)
    mass = W * np.abs(u) ** q
    tot = mass.sum()
    if not tot > 0:
        return {"inner": float("nan"), "outer": float("nan")}
    rho = grid.mesh("rho")
    x = np.sqrt(rho ** 2 + grid.mesh("t") ** 2)
    r0 = grid.axis("rho").nodes[1]
    R = min(grid.axis("rho").nodes[-1], grid.axis("t").nodes[-1])
    return {"inner": float(mass[x < 2 * r0].sum() / tot),
            "outer": float(mass[x > R / 2].sum() / tot),
            "r0": float(r0)}


def _solve_from(params, dom, mask, u0, opts):
    pb = QuotientProblem(dom.grid, mask, params.p, params.q, params.sigma, eta=opts.eta)
    return minimize(pb, u0, opts.flow()), pb


def minimize_quotient(params: ProblemParams, dom: WedgeDomain, opts: SolverOptions = None,
                      initial=None) -> ExtremalSolution:
    opts = opts or SolverOptions()
    _check_params(params, dom, opts)
    mask = dom.mask()
    rng = np.random.default_rng(opts.seed)
    starts = []
    if initial is not None:
        starts.append(np.asarray(initial, float))
    base = min(dom.Ry, dom.Rz) / 8.0
    for k in range(max(opts.n_starts - len(starts), 0)):
        if k == 0:
            L, Lt = base, base
            noise = 0.0
        else:
            L = base * math.exp(rng.uniform(-1.0, 1.0))
            Lt = base * math.exp(rng.uniform(-1.0, 1.0))
            noise = 0.2
        u0 = smooth_start(params, dom, L, Lt, inner=L / 20)
        if noise:
            u0 = u0 * (1.0 + noise * rng.uniform(-1, 1, size=u0.shape))
        starts.append(u0)
    runs = []
    for u0 in starts:
        res, pb = _solve_from(params, dom, mask, u0, opts)
        runs.append(res)
    best = min(runs, key=lambda r: r.J)
    mus = sorted(r.J for r in runs)
    basins = []
    for mu in mus:
        if not basins or abs(mu - basins[-1]) > opts.basin_rtol * abs(mu):
            basins.append(mu)
    u = best.u
    profile = GridFunction.masked(dom.grid, u, mask)
    mf = dyadic_mass(dom.grid, mask, u, params.sigma, params.q)
    diag = "converged" if best.converged else "budget"
    converged = best.converged
    if mf["inner"] > opts.concentration_threshold:
        diag, converged = "concentration", False
    elif mf["outer"] > opts.concentration_threshold:
        diag, converged = "spreading", False
    return ExtremalSolution(best.J, profile, best.residual, best.iterations, converged, diag,
                            basins, best.history, mf, params.q, params.sigma, params.p)


def euler_lagrange_residual(sol: ExtremalSolution, params: ProblemParams) -> float:
    g = sol.profile.grid
    pb = QuotientProblem(g, sol.profile.mask, params.p, params.q, params.sigma)
    return pb.residual(sol.profile.values)


def scaled_residual(profile: GridFunction, params: ProblemParams, c: float) -> float:
    """Relative residual of  -Delta_p(cV) = (cV)^{q-1} |y|^{-(1-sigma)q}  on free nodes."""
    from .core.functionals import energy_and_gradient
    g = profile.grid
    pb = QuotientProblem(g, profile.mask, params.p, params.q, params.sigma)
    u = c * profile.values
    _, gE = energy_and_gradient(g, u, params.p, 0.0)
    rhs = pb.source(u)
    r = (gE / params.p - rhs)[pb.free]
    return float(np.linalg.norm(r) / np.linalg.norm(rhs[pb.free]))


def stationarity_scale(sol: ExtremalSolution, params: ProblemParams) -> float:
    """c with -Delta_p(cV) = (cV)^{q-1}/|y|^a for V normalized (S = 1): c^{q-p} = E."""
    if params.q == params.p:
        raise ValueError("no scaling freedom when q = p")
    E = sol.mu ** params.p
    return E ** (1.0 / (params.q - params.p))


# -- perturbed wedges ---------------------------------------------------------

@dataclass
class PerturbedResult:
    mu_base: float
    mu_perturbed: float
    gap: float
    grid_error: float = float("nan")
    identical: bool = False
    caveat: str = ""
    components: int = 1
    coarse_gap: float = float("nan")


def _components(mask):
    structure = np.ones((3,) * mask.ndim, bool)
    lab, nlab = ndimage.label(~mask, structure=structure)
    return lab, nlab


def _compare_on(params, base: WedgeDomain, bump: Region, opts):
    dom_b = base.with_regions(bumps=())
    dom_p = base.with_regions(bumps=tuple(base.bumps) + (bump,))
    mask_b = dom_b.mask()
    mask_p = dom_p.mask()
    sol_b = minimize_quotient(params, dom_b, opts)
    if np.array_equal(mask_b, mask_p):
        return sol_b.mu, sol_b.mu, True, 1
    lab, nlab = _components(mask_p)
    main = set(np.unique(lab[~mask_b])) - {0}
    mus = []
    for k in range(1, nlab + 1):
        comp_mask = lab != k
        if k in main:
            if np.array_equal(comp_mask, mask_b):
                mus.append(sol_b.mu)
                continue
            u0 = np.where(comp_mask, 0.0, sol_b.profile.values)
            res, _ = _solve_from(params, dom_p, comp_mask, u0, opts)
            mus.append(min(res.J, sol_b.mu))
        else:
            one = SolverOptions(**{**opts.__dict__, "n_starts": 1})
            rho = dom_p.grid.mesh("rho")
            u0 = np.where(comp_mask, 0.0, 1.0 + 0.0 * rho)
            res, _ = _solve_from(params, dom_p, comp_mask, u0, one)
            mus.append(res.J)
    return sol_b.mu, min(mus), False, nlab


def coarsened(dom: WedgeDomain) -> WedgeDomain:
    """Same domain on a grid with half the cells per axis."""
    g = dom.grid
    rho = g.axis("rho")
    t = g.axis("t")
    ratio_r = (rho.nodes[-1] - rho.nodes[-2]) / (rho.nodes[-2] - rho.nodes[-3])
    n_r = rho.size - 1
    n_t = t.size
    new_rho = graded_nodes(dom.Ry, n_r // 2, ratio_r ** 2)
    rt = (t.nodes[-1] - t.nodes[-2]) / (t.nodes[-2] - t.nodes[-3])
    new_t = graded_nodes(dom.Rz, n_t // 2, rt ** 2, mirror=True)
    axes = [("rho", new_rho), ("t", new_t, True)]
    if not dom.radial:
        th = g.axis("theta").nodes
        axes.insert(1, ("theta", th[::2] if (th.size - 1) % 2 == 0 else th))
    grid = AxiGrid.build(g.m, g.n, axes)
    return WedgeDomain(dom.cap, dom.Ry, dom.Rz, grid, dom.bumps, dom.obstacles)


def perturbed_compare(params: ProblemParams, base: WedgeDomain, bump: Region,
                      opts: SolverOptions = None, grid_error: bool = True) -> PerturbedResult:
    opts = opts or SolverOptions()
    if bump.rho[0] <= 0:
        raise ValueError("bump must stay away from the axis")
    caveat = "" if params.p == 2 else "general p: comparison relies on the reweighted solver"
    mb, mp, ident, ncomp = _compare_on(params, base, bump, opts)
    out = PerturbedResult(mb, mp, mb - mp, identical=ident, caveat=caveat, components=ncomp)
    if grid_error and not ident:
        cb, cp_, _, _ = _compare_on(params, coarsened(base), bump, opts)
        out.coarse_gap = cb - cp_
        out.grid_error = abs(out.gap - out.coarse_gap)
    elif ident:
        out.grid_error = 0.0
    return out


@dataclass
class ObstacleReport:
    mu_base: float
    mu_obstacle: float
    lambdas: list
    gaps: list
    quotients: list


def obstacle_sweep(params: ProblemParams, base: WedgeDomain, obstacle: Region,
                   lambdas=(1.0, 0.5, 0.25, 0.125), opts: SolverOptions = None) -> ObstacleReport:
    """Removal of an obstacle: mu_obstacle >= mu_base, and the quotient of the
    dilated base extremal cut off on the obstacle approaches mu_base as the
    mass is dilated toward the vertex."""
    from .core.functionals import rayleigh_quotient
    opts = opts or SolverOptions()
    sol = minimize_quotient(params, base, opts)
    dom_o = base.with_regions(obstacles=tuple(base.obstacles) + (obstacle,))
    mask_o = dom_o.mask()
    u0 = np.where(mask_o, 0.0, sol.profile.values)
    res, _ = _solve_from(params, dom_o, mask_o, u0, opts)
    g = base.grid
    names = g.names
    interp = RegularGridInterpolator([a.nodes for a in g.axes], sol.profile.values,
                                     bounds_error=False, fill_value=0.0)
    gaps, quots = [], []
    for lam in lambdas:
        pts = []
        for nm in names:
            c = g.mesh(nm)
            pts.append(c / lam if nm in ("rho", "t") else c)
        v = interp(np.stack([x.ravel() for x in pts], -1)).reshape(g.shape)
        v_full = GridFunction.masked(g, v, base.mask())
        v_cut = GridFunction.masked(g, v, mask_o)
        j_full = rayleigh_quotient(v_full, params)
        j_cut = rayleigh_quotient(v_cut, params)
        gaps.append(j_cut - sol.mu)
        quots.append((j_full, j_cut))
    return ObstacleReport(sol.mu, res.J,
                          list(lambdas), gaps, quots)
