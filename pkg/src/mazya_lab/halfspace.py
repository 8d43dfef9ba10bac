"""p = 2 extremal of the half-space {y1 > 0}, its asymptotics and Kelvin symmetry.

The half-space is carried on the polar wedge grid (rho, theta, t) with the cap
theta < pi/2 measured from the inner normal e_{y1}, so y1 = rho cos(theta) and
r = |y'| = rho sin(theta).  The boundary y1 = 0 is theta = pi/2.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core.flow import FlowOptions, QuotientProblem, minimize
from .core.grid import AxiGrid, GridFunction, boundary_mask, graded_nodes
from .core.params import ProblemParams
from .wedge_extremal import dyadic_mass


@dataclass(eq=False)
class HalfspaceSolution:
    mu_q: float
    phi: GridFunction
    normalized: bool
    M: float
    residual: float
    sigma: float
    box: float
    iterations: int = 0
    converged: bool = False
    diagnostic: str = "converged"
    cross_check: float = float("nan")   # relative J change under the power step
    history: list = field(default_factory=list)

    @property
    def m(self):
        return self.phi.grid.m

    @property
    def n(self):
        return self.phi.grid.n

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.m, self.n, 2.0, self.sigma)

    @property
    def q(self) -> float:
        return self.params.q

    @property
    def grid(self) -> AxiGrid:
        return self.phi.grid

    def reduced_coords(self):
        """(y1, r, t) node arrays."""
        g = self.grid
        rho, th, t = g.mesh("rho"), g.mesh("theta"), g.mesh("t")
        return rho * np.cos(th), rho * np.sin(th), t

    def header(self) -> dict:
        return {"kind": "halfspace-solution", "m": self.m, "n": self.n, "p": 2.0,
                "sigma": self.sigma, "q": self.q, "mu_q": self.mu_q, "M": self.M,
                "residual": self.residual, "box": self.box, "normalized": self.normalized,
                "iterations": self.iterations, "converged": self.converged,
                "diagnostic": self.diagnostic, "cross_check": self.cross_check,
                "grid": self.grid.spec(), "order": "C order over (rho, theta, t)"}

    def save(self, path) -> tuple:
        """Write <path>.json (header) and <path>.csv (y1, r, t, phi)."""
        path = Path(path)
        js, cv = path.with_suffix(".json"), path.with_suffix(".csv")
        js.write_text(json.dumps(self.header(), indent=1, sort_keys=True))
        y1, r, t = self.reduced_coords()
        with cv.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y1", "r", "t", "phi"])
            for row in zip(y1.ravel(), r.ravel(), t.ravel(), self.phi.values.ravel()):
                w.writerow(["%.17g" % x for x in row])
        return js, cv

    @classmethod
    def load(cls, path) -> "HalfspaceSolution":
        path = Path(path)
        hdr = json.loads(path.with_suffix(".json").read_text())
        if hdr.get("kind") != "halfspace-solution":
            raise ValueError("not a half-space solution file")
        g = AxiGrid.from_spec(hdr["grid"])
        with path.with_suffix(".csv").open() as fh:
            rd = csv.reader(fh)
            if next(rd) != ["y1", "r", "t", "phi"]:
                raise ValueError("unexpected CSV columns")
            vals = np.array([float(row[3]) for row in rd])
        if vals.size != int(np.prod(g.shape)):
            raise ValueError("value table does not match the grid")
        phi = GridFunction(g, vals.reshape(g.shape), halfspace_mask(g))
        return cls(hdr["mu_q"], phi, hdr["normalized"], hdr["M"], hdr["residual"],
                   hdr["sigma"], hdr["box"], hdr["iterations"], hdr["converged"],
                   hdr["diagnostic"], hdr["cross_check"])


def halfspace_grid(m, n, box=40.0, resolution=96, ratio=1.08, n_theta=None) -> AxiGrid:
    rho = graded_nodes(box, resolution, ratio)
    t = graded_nodes(box, resolution, ratio, mirror=True)
    th = np.linspace(0.0, math.pi / 2, (n_theta or resolution // 2) + 1)
    return AxiGrid.build(m, n, [("rho", rho), ("theta", th), ("t", t, True)])


def halfspace_mask(grid) -> np.ndarray:
    return boundary_mask(grid, rho=("low", "high"), theta="high", t="high")


def initial_guess(grid, scale=1.0) -> np.ndarray:
    """y1 / (scale^2 + |x|^2)^{n/2}: the far-field law, regular at the origin."""
    rho, th, t = grid.node_coords("rho"), grid.node_coords("theta"), grid.node_coords("t")
    u = rho * np.cos(th) / (scale ** 2 + rho ** 2 + t ** 2) ** (grid.n / 2)
    return np.broadcast_to(u, grid.shape).copy()


def solve_halfspace(m, n, sigma, box=40.0, resolution=96, ratio=1.08, n_theta=None,
                    opts: FlowOptions = None, cross_check=True) -> HalfspaceSolution:
    if not 0.0 < sigma < 1.0:
        raise ValueError("need 0 < sigma < 1")
    params = ProblemParams(m, n, 2.0, sigma)
    g = halfspace_grid(m, n, box, resolution, ratio, n_theta)
    mask = halfspace_mask(g)
    pb = QuotientProblem(g, mask, 2.0, params.q, sigma)
    opts = opts or FlowOptions(max_iter=400)
    res = minimize(pb, initial_guess(g), opts)
    u = np.where(mask, 0.0, np.abs(res.u))
    u = pb.normalize(u)
    phi = GridFunction.masked(g, u, mask)
    check = float("nan")
    if cross_check:
        # one nonlinear inverse power step from the limit: a genuine ground
        # state is a fixed point of both schemes
        pw = minimize(pb, u, FlowOptions(max_iter=3, method="power", tol=0.0))
        check = abs(pw.J - res.J) / res.J
    mf = dyadic_mass(g, mask, u, sigma, params.q)
    diag, conv = ("converged" if res.converged else "budget"), res.converged
    if mf["inner"] > 0.5:
        diag, conv = "concentration", False
    elif mf["outer"] > 0.5:
        diag, conv = "spreading", False
    sol = HalfspaceSolution(res.J, phi, True, float("nan"), res.residual, sigma, box,
                            res.iterations, conv, diag, check, res.history)
    sol.M = boundary_gradient_constant(sol)["M"]
    return sol


# -- evaluation helpers ---------------------------------------------------------

def interpolator(sol: HalfspaceSolution, method="linear"):
    """phi(rho, theta, t) with zero continuation beyond the truncation box."""
    g = sol.grid
    nodes = [a.nodes for a in g.axes]
    it = RegularGridInterpolator(nodes, sol.phi.values, method=method,
                                 bounds_error=False, fill_value=0.0)
    t0 = nodes[2][0]

    def f(rho, theta, t):
        rho, theta, t = np.broadcast_arrays(np.asarray(rho, float), np.asarray(theta, float),
                                            np.asarray(t, float))
        pts = np.stack([rho.ravel(), np.abs(theta).ravel(),
                        np.maximum(t, t0).ravel()], -1)   # constant on the ghost cell
        return it(pts).reshape(rho.shape)
    return f


def boundary_gradient(sol: HalfspaceSolution):
    """|grad phi| on y1 = 0 as (r, t, value) arrays: the one-sided normal
    derivative d_theta phi / rho at theta = pi/2 (second order)."""
    g = sol.grid
    th = g.axis("theta").nodes
    rho = g.axis("rho").nodes
    v = sol.phi.values
    h1 = th[-1] - th[-2]
    h2 = th[-1] - th[-3]
    f1, f2 = v[:, -2, :], v[:, -3, :]
    # derivative at theta_N of the quadratic through (theta_N, 0), (theta_{N-1}, f1), (theta_{N-2}, f2)
    d = -(f1 * h2 ** 2 - f2 * h1 ** 2) / (h1 * h2 * (h2 - h1))
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = np.abs(d) / rho[:, None]
    r = np.broadcast_to(rho[:, None], grad.shape)
    t = np.broadcast_to(g.axis("t").nodes[None, :], grad.shape)
    return r, t, grad


def boundary_gradient_constant(sol: HalfspaceSolution, window=None) -> dict:
    """M from |grad phi(0, r; t)| |x|^n over the far window, with its spread."""
    r, t, grad = boundary_gradient(sol)
    x = np.sqrt(r ** 2 + t ** 2)
    lo, hi = window or (sol.box / 16, sol.box / 4)
    sel = (x >= lo) & (x <= hi) & (r > 0) & np.isfinite(grad)
    if not np.any(sel):
        return {"M": float("nan"), "spread": float("nan"), "annuli": []}
    val = grad[sel] * x[sel] ** sol.n
    annuli = []
    a = lo
    while a < hi * (1 - 1e-12):
        b = min(2 * a, hi)
        s = (x[sel] >= a) & (x[sel] <= b)
        if np.any(s):
            annuli.append(float(np.median(val[s])))
        a = b
    return {"M": float(np.median(val)), "spread": float(val.max() / val.min()),
            "annuli": annuli, "window": (lo, hi)}


# -- asymptotics ----------------------------------------------------------------

@dataclass
class AsymptoticFit:
    near_exponent: float
    far_exponent: float
    M: float
    M_spread: float
    M_annuli: list
    near_window: tuple
    far_window: tuple
    warnings: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.near_exponent, self.far_exponent, self.M))


def _slope(x, y):
    A = np.vstack([np.log(x), np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return float(coef[0])


def mass_radius(sol: HalfspaceSolution) -> float:
    """Median radius of the weighted q-mass."""
    from .core.functionals import norm_weights
    g = sol.grid
    W = norm_weights(g, sol.phi.mask, sol.sigma, sol.q) * sol.phi.values ** sol.q
    x = np.sqrt(g.mesh("rho") ** 2 + g.mesh("t") ** 2).ravel()
    order = np.argsort(x)
    c = np.cumsum(W.ravel()[order])
    return float(x[order][np.searchsorted(c, 0.5 * c[-1])])


def fit_asymptotics(sol: HalfspaceSolution, near_window=None, far_window=None,
                    n_points=24) -> AsymptoticFit:
    """Log-log fits of phi near the origin (along directions off the boundary)
    and along oblique rays y1/|x| = const far out; M from the boundary gradient."""
    f = interpolator(sol)
    g = sol.grid
    warn = []
    L = mass_radius(sol)
    h0 = g.axis("rho").nodes[1]
    near = near_window or (4 * h0, L / 8)
    if near[1] <= 2 * near[0]:
        warn.append("near window narrower than one dyadic scale")
    far = far_window or (sol.box / 16, sol.box / 4)
    if far[1] > sol.box / 3:
        warn.append("far window too close to the truncation boundary")
    if far[0] < 4 * L:
        warn.append("far window overlaps the bulk of the mass")
    s_near = np.geomspace(near[0], near[1], n_points)
    s_far = np.geomspace(far[0], far[1], n_points)
    nears, fars = [], []
    for theta, gam in ((0.0, 0.0), (math.pi / 4, 0.0), (math.pi / 4, math.pi / 4)):
        # ray: rho = s cos(gam), t = s sin(gam) at fixed theta
        vn = f(s_near * math.cos(gam), theta, s_near * math.sin(gam))
        vf = f(s_far * math.cos(gam), theta, s_far * math.sin(gam))
        if np.all(vn > 0):
            nears.append(_slope(s_near, vn))
        if np.all(vf > 0):
            fars.append(_slope(s_far, vf))
    if not nears or not fars:
        warn.append("profile vanishes inside a fit window")
    Md = boundary_gradient_constant(sol, far)
    return AsymptoticFit(float(np.mean(nears)) if nears else float("nan"),
                         float(np.mean(fars)) if fars else float("nan"),
                         Md["M"], Md["spread"], Md["annuli"], tuple(near), tuple(far), warn)


# -- Kelvin transform -----------------------------------------------------------

def kelvin(func, n):
    """u -> |x|^{2-n} u(x/|x|^2) on functions of (rho, theta, t)."""
    def out(rho, theta, t):
        rho, theta, t = np.broadcast_arrays(np.asarray(rho, float), np.asarray(theta, float),
                                            np.asarray(t, float))
        x2 = rho ** 2 + t ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            val = x2 ** ((2 - n) / 2) * func(rho / x2, theta, t / x2)
        return np.where(x2 > 0, val, 0.0)
    return out


def smooth_tests(grid, centers, width):
    """Smooth compactly supported bumps (1 - d^2)^3 in (log rho, theta, log t)."""
    rho, th, t = grid.mesh("rho"), grid.mesh("theta"), grid.mesh("t")
    out = []
    for (rc, thc, tc) in centers:
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = (np.log(rho / rc) / width) ** 2 + ((th - thc) / (width * 0.5)) ** 2 \
                + (np.log(t / tc) / width) ** 2
            out.append(np.where(d2 < 1, (1 - d2) ** 3, 0.0))
    return out


def very_weak_residual(grid, mask, u, mu2, sigma, q, tests) -> float:
    """sum_k |<grad u, grad psi_k> - mu^2 <u^{q-1}|y|^{-a}, psi_k>| / sum_k |rhs_k|."""
    from .core.functionals import energy_and_gradient
    pb = QuotientProblem(grid, mask, 2.0, q, sigma)
    _, gE = energy_and_gradient(grid, u, 2.0, 0.0)
    src = pb.source(u)
    num = den = 0.0
    for psi in tests:
        psi = np.where(mask, 0.0, psi)
        a = float(np.sum(psi * gE) / 2)
        b = float(mu2 * np.sum(psi * src))
        num += abs(a - b)
        den += abs(b)
    return num / den


@dataclass
class KelvinReport:
    involution_error: float       # |K(K phi) - phi| / max phi on interior nodes
    roundtrip_error: float        # same through a tabulated intermediate (interpolation error)
    residual_phi: float
    residual_kelvin: float
    near_exponent_kelvin: float
    expected_near_exponent: float


def _check_grid(sol, lo, hi, n_cells=48):
    """Independent grid on which both phi and its Kelvin image are sampled."""
    g = sol.grid
    rho = np.concatenate([[0.0], np.geomspace(lo / 4, hi * 4, n_cells)])
    th = np.linspace(0.0, math.pi / 2, 2 * (n_cells // 6) + 1)
    t = np.geomspace(lo / 8, hi * 4, n_cells)
    return AxiGrid.build(g.m, g.n, [("rho", rho), ("theta", th), ("t", t, True)])


def kelvin_check(sol: HalfspaceSolution, window=(0.5, 2.0), n_tests=12) -> KelvinReport:
    g = sol.grid
    n = g.n
    lo, hi = window
    if 1.0 / lo > sol.box / 2 or hi > sol.box / 2:
        raise ValueError("Kelvin window maps outside the stored grid")
    f = interpolator(sol)
    K = kelvin(f, n)
    KK = kelvin(K, n)
    rho, th, t = g.mesh("rho"), g.mesh("theta"), g.mesh("t")
    x = np.sqrt(rho ** 2 + t ** 2)
    inner = (~sol.phi.mask) & (x > 2.0 / sol.box) & (x < sol.box / 2)
    scale = float(sol.phi.values.max())
    inv = float(np.max(np.abs(KK(rho, th, t) - sol.phi.values)[inner]) / scale)
    # round trip through a tabulated image on the same grid
    tab = np.where(sol.phi.mask, 0.0, K(rho, th, t))
    it = RegularGridInterpolator([a.nodes for a in g.axes], tab, bounds_error=False,
                                 fill_value=0.0)
    t0 = g.axis("t").nodes[0]

    def ftab(r_, th_, t_):
        pts = np.stack([r_.ravel(), th_.ravel(), np.maximum(t_, t0).ravel()], -1)
        return it(pts).reshape(r_.shape)
    rt = kelvin(ftab, n)(rho, th, t)
    mid = inner & (x > lo) & (x < hi)
    round_err = float(np.max(np.abs(rt - sol.phi.values)[mid]) / scale)
    # weak residuals of phi and K phi on an independent check grid, smooth tests
    cg = _check_grid(sol, lo, hi)
    cmask = halfspace_mask(cg)
    crho, cth, ct = cg.mesh("rho"), cg.mesh("theta"), cg.mesh("t")
    u_phi = np.where(cmask, 0.0, f(crho, cth, ct))
    u_k = np.where(cmask, 0.0, K(crho, cth, ct))
    rng = np.random.default_rng(7)
    centers = [(math.exp(rng.uniform(math.log(lo) + 0.3, math.log(hi) - 0.3)),
                rng.uniform(0.3, 1.2),
                math.exp(rng.uniform(math.log(lo) + 0.3, math.log(hi) - 0.3)))
               for _ in range(n_tests)]
    tests = smooth_tests(cg, centers, 0.3)
    mu2 = sol.mu_q ** 2
    r_phi = very_weak_residual(cg, cmask, u_phi, mu2, sol.sigma, sol.q, tests)
    r_k = very_weak_residual(cg, cmask, u_k, mu2, sol.sigma, sol.q, tests)
    # near-origin exponent of K phi along the oblique ray used for the far fit
    fit = fit_asymptotics(sol)
    far = fit.far_window
    s = np.geomspace(1.0 / far[1], 1.0 / far[0], 24)
    gam = math.pi / 4
    vk = K(s * math.cos(gam), math.pi / 4, s * math.sin(gam))
    near_k = _slope(s, vk) if np.all(vk > 0) else float("nan")
    return KelvinReport(inv, round_err, r_phi, r_k, near_k, (2 - n) - fit.far_exponent)


def quarter_space_mu(sol: HalfspaceSolution, opts: FlowOptions = None) -> float:
    """Infimum on the sub-domain theta < pi/4 of the same grid (for m = 2 the
    quarter space); domain inclusion forces it to be >= mu_q."""
    g = sol.grid
    th = g.mesh("theta")
    mask = sol.phi.mask | (th >= math.pi / 4 - 1e-12)
    pb = QuotientProblem(g, mask, 2.0, sol.q, sol.sigma)
    u0 = np.where(mask, 0.0, sol.phi.values * np.cos(2 * np.minimum(th, math.pi / 4)))
    res = minimize(pb, u0, opts or FlowOptions(max_iter=300))
    return res.J
