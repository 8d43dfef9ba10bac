"""Bent half-space test functions: the A1/A2 quadratures, the assembled quotient
and the direct oracle through the straightening map.

All quadratures read the stored half-space extremal phi (p = 2, normalized to
unit weighted q-mass).  Distances are in the units of phi; eps is the dilation
of phi and delta the radius of the cut-off, which equals 1 for
|y|, |z| < delta/2 and vanishes once either exceeds delta.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..core.functionals import quad_points_for
from ..core.params import sphere_area
from ..halfspace import HalfspaceSolution, boundary_gradient
from .profile import (BoundaryProfile, ProfileKind, average_f, beta_rule, divergence_verdict,
                      hypothesis_report)

DEFAULT_DELTA = 0.25


class GridSupportError(ValueError):
    """The eps-scaled cut-off support leaves the stored grid."""


# -- cut-off ------------------------------------------------------------------------

def _h(x):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def _dh(x):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        xs = np.where(x > 0, x, 1.0)
        return np.where(x > 0, np.exp(-1.0 / xs) / xs ** 2, 0.0)


def chi(s, delta):
    """Smooth step: 1 for s <= delta/2, 0 for s >= delta."""
    x = (np.asarray(s, float) - 0.5 * delta) / (0.5 * delta)
    a, b = _h(1.0 - x), _h(x)
    return a / (a + b)


def chi_prime(s, delta):
    x = (np.asarray(s, float) - 0.5 * delta) / (0.5 * delta)
    a, b = _h(1.0 - x), _h(x)
    da, db = -_dh(1.0 - x), _dh(x)
    return (da * (a + b) - a * (da + db)) / (a + b) ** 2 / (0.5 * delta)


def cutoff(ynorm, znorm, delta):
    return chi(ynorm, delta) * chi(znorm, delta)


def _check_support(sol: HalfspaceSolution, eps, delta):
    if not eps > 0:
        raise ValueError("eps must be positive")
    if delta / eps > sol.box * (1 + 1e-12):
        raise GridSupportError(f"cut-off radius delta/eps = {delta / eps:g} exceeds the stored "
                               f"box {sol.box:g}; use eps >= {delta / sol.box:g}")


# -- A1 -----------------------------------------------------------------------------

def compute_A1(sol: HalfspaceSolution, F: BoundaryProfile, eps: float, delta=DEFAULT_DELTA,
               ng: int = None) -> float:
    """A1(eps) = q(1-sigma)/eps int phi^q y1 |y|^{-q(1-sigma)-2} cut^q F(eps y'; eps z),
    with F replaced by its product-sphere mean f1 (phi and the cut-off are
    radial in y' and z)."""
    _check_support(sol, eps, delta)
    if (F.m, F.n) != (sol.m, sol.n):
        raise ValueError("profile dimensions do not match the solution")
    g = sol.grid
    q, a = sol.q, sol.q * (1.0 - sol.sigma)
    quad = g.quadrature(ng or quad_points_for(q), -a - 1.0)
    quad.check_support(sol.phi.values)
    rho, th, t = quad.coords("rho"), quad.coords("theta"), quad.coords("t")
    ph = np.abs(quad.at(sol.phi.values)) ** q
    cut = cutoff(eps * rho, eps * t, delta) ** q
    f1 = F.f1_values(eps * rho * np.sin(th), eps * t)
    return float(a / eps * np.sum(quad.weights * ph * np.cos(th) * cut * f1))


# -- boundary gradient ----------------------------------------------------------------

class BoundaryGradient:
    """|grad phi(0, r; t)| from the stored solution, with monotone cubic
    interpolation in (r, t) and polar quadrature on the boundary R^{n-1}."""

    def __init__(self, sol: HalfspaceSolution):
        r, t, G = boundary_gradient(sol)
        rn, tn = r[:, 0].copy(), t[0].copy()
        G = np.array(G)
        # the origin row is 0/0; extrapolate linearly from the next two nodes
        G[0] = G[1] + (G[1] - G[2]) * (rn[1] - rn[0]) / (rn[2] - rn[1])
        self.sol = sol
        self.r_nodes, self.t_nodes, self.values = rn, tn, G
        self._it = RegularGridInterpolator((rn, tn), G, method="pchip", bounds_error=False,
                                           fill_value=0.0)
        self.m, self.n = sol.m, sol.n

    def __call__(self, r, t):
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        pts = np.stack([r.ravel(), np.maximum(t, self.t_nodes[0]).ravel()], -1)
        return self._it(pts).reshape(r.shape)

    def polar_integral(self, integrand, lo, hi, order_beta=24, n_gauss=4):
        """omega_{n-2} int_lo^hi s^{n-2} E_beta[integrand(r, t, |grad phi|)] ds
        over boundary points (r, t) = s (cos b, sin b); equals the integral of
        integrand over {lo < |(y', z)| < hi} in R^{n-1}."""
        if hi <= lo:
            return 0.0
        u, wu = beta_rule(self.m, self.n, order_beta)
        edges = self.r_nodes[(self.r_nodes > lo) & (self.r_nodes < hi)]
        edges = np.unique(np.concatenate([[lo], edges, [hi]]))
        xg, wg = np.polynomial.legendre.leggauss(n_gauss)
        a, b = edges[:-1], edges[1:]
        s = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * xg).ravel()
        ws = (0.5 * (b - a)[:, None] * wg).ravel()
        r = s[:, None] * np.sqrt(1.0 - u)
        t = s[:, None] * np.sqrt(u)
        val = integrand(r, t, self(r, t))
        inner = val @ wu
        return float(sphere_area(self.n - 2) * np.sum(ws * s ** (self.n - 2) * inner))


def far_field_radius(sol: HalfspaceSolution, tol=0.05, per_octave=4):
    """Smallest shell radius beyond which the shell medians of
    |grad phi(0, r; t)| |x|^n stay within tol of M, up to box/4."""
    r, t, G = boundary_gradient(sol)
    x = np.hypot(r, t)
    val = G * x ** sol.n
    h0 = sol.grid.axis("rho").nodes[1]
    hi = sol.box / 4
    edges = np.geomspace(4 * h0, hi, int(per_octave * math.log2(hi / (4 * h0))) + 1)
    med = []
    for a, b in zip(edges[:-1], edges[1:]):
        s = (x >= a) & (x < b) & (r > 0) & np.isfinite(val)
        med.append(float(np.median(val[s])) if np.any(s) else float("nan"))
    med = np.array(med)
    ok = np.abs(med / sol.M - 1.0) <= tol
    R, found = sol.box / 16, False
    for k in range(len(med)):
        if np.all(ok[k:]):
            R, found = float(edges[k]), True
            break
    return R, {"found": found, "shell_edges": edges.tolist(), "shell_medians": med.tolist(),
               "tol": tol}


# -- A2 -----------------------------------------------------------------------------

@dataclass
class A2Result:
    value: float
    regime: str
    parts: dict = field(default_factory=dict)     # L1, L2, L3 for the critical split
    R: float = float("nan")

    def __float__(self):
        return self.value


def _regime_of(F: BoundaryProfile):
    return "critical" if F.alpha >= F.n + 1 else "subcritical"


def compute_A2(sol: HalfspaceSolution, F: BoundaryProfile, eps: float, delta=DEFAULT_DELTA,
               regime: str = None, R: float = None, bg: BoundaryGradient = None) -> A2Result:
    """A2(eps) = (1/eps) int_{R^{n-1}} cut^2 |grad phi(0, y'; z)|^2 F(eps y'; eps z).

    subcritical: the full boundary quadrature against f1(eps r, eps t).
    critical: the split |x| < R (data), R < |x| < delta/(2 eps) (far-field law
    M/|x|^n against f), and the cut-off shell (far-field law against f1).
    When R eps exceeds delta/2 the middle piece is empty and the shell starts at R."""
    regime = regime or _regime_of(F)
    if regime != _regime_of(F):
        raise ValueError(f"regime {regime!r} inconsistent with RVF order {F.alpha}")
    if (F.m, F.n) != (sol.m, sol.n):
        raise ValueError("profile dimensions do not match the solution")
    n = sol.n
    bg = bg or BoundaryGradient(sol)
    if regime == "subcritical":
        _check_support(sol, eps, delta)

        def integrand(r, t, G):
            return cutoff(eps * r, eps * t, delta) ** 2 * F.f1_values(eps * r, eps * t) * G * G
        val = bg.polar_integral(integrand, 0.0, math.sqrt(2) * delta / eps) / eps
        return A2Result(val, regime)
    verdict, _ = divergence_verdict(F, delta)
    if verdict != "divergent":
        raise ValueError("critical regime needs a divergent int f(r)/r^{n+2} dr")
    if R is None:
        R, _ = far_field_radius(sol)
    M2 = sol.M ** 2
    # L1: data inside |x| < R, cut-off included (it is 1 there once R eps <= delta/2)
    L1 = bg.polar_integral(
        lambda r, t, G: cutoff(eps * r, eps * t, delta) ** 2 * F.f1_values(eps * r, eps * t) * G * G,
        0.0, min(R, math.sqrt(2) * delta / eps)) / eps
    # L2: far-field law against f where the cut-off is 1; substitute s = eps |x|
    lo2 = min(R * eps, 0.5 * delta)
    L2 = 0.0
    if lo2 < 0.5 * delta:
        L2 = sphere_area(n - 2) * M2 * eps ** n * _radial_integral(
            lambda s: np.asarray(average_f(F, s)) / s ** (n + 2), lo2, 0.5 * delta)
    # L3: cut-off shell with the far-field law
    u, wu = beta_rule(F.m, n, 24)

    def shell(s):
        rr = s[:, None] * np.sqrt(1.0 - u)
        tt = s[:, None] * np.sqrt(u)
        v = cutoff(rr, tt, delta) ** 2 * F.f1_values(rr, tt)
        return (v @ wu) / s ** (n + 2)
    lo3, hi3 = max(R * eps, 0.5 * delta), math.sqrt(2) * delta
    L3 = 0.0
    if lo3 < hi3:
        L3 = sphere_area(n - 2) * M2 * eps ** n * _radial_integral(shell, lo3, hi3)
    return A2Result(L1 + L2 + L3, regime, {"L1": L1, "L2": L2, "L3": L3}, R)


def _radial_integral(fn, lo, hi, per_octave=2, n_gauss=8):
    """int_lo^hi fn(s) ds on geometric panels."""
    k = max(1, int(math.ceil(per_octave * math.log2(hi / lo))))
    edges = np.geomspace(lo, hi, k + 1)
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    a, b = edges[:-1], edges[1:]
    s = (0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * xg).ravel()
    w = (0.5 * (b - a)[:, None] * wg).ravel()
    return float(np.sum(w * fn(s)))


def f_log_integral(F: BoundaryProfile, eps, delta=DEFAULT_DELTA) -> float:
    """int_eps^delta f(r) / r^{n+2} dr."""
    n = F.n
    return _radial_integral(lambda s: np.asarray(average_f(F, s)) / s ** (n + 2), eps, delta)


# -- quotient -----------------------------------------------------------------------

def assemble_quotient(mu_sq, A1, A2, q) -> float:
    """(mu^2 + A2 - (2 mu^2/q) A1) / (1 - A1)^{2/q}."""
    return (mu_sq + A2 - 2.0 * mu_sq / q * A1) / (1.0 - A1) ** (2.0 / q)


def _axisymmetric_parts(F: BoundaryProfile):
    """(F, F_r, F_t) as functions of (|y'|, |z|)."""
    if F.axisymmetric:
        return F.radial, F.radial_grad
    if F.kind is ProfileKind.QUADRATIC:
        A, B = F.params["A"], F.params["B"]
        a, b = A[0, 0] if A.size else 0.0, B[0, 0] if B.size else 0.0
        if not (np.allclose(A, a * np.eye(A.shape[0])) and np.allclose(B, b * np.eye(B.shape[0]))):
            raise ValueError("direct oracle needs F depending only on (|y'|, |z|)")
        return (lambda r, t: a * r * r + b * t * t), (lambda r, t: (2 * a * r, 2 * b * t))
    raise ValueError("direct oracle needs F depending only on (|y'|, |z|)")


@dataclass
class DirectQuotient:
    quotient: float
    numerator: float
    denominator: float      # weighted q-mass (before the 2/q power)


def direct_bent_quotient(sol: HalfspaceSolution, F: BoundaryProfile, eps: float,
                         delta=DEFAULT_DELTA, ng_q: int = None) -> DirectQuotient:
    """Raw quotient of phi_eps(x) = eps^{-(n-2)/2} phi(Theta_eps x) cut(x) on
    the bent domain y1 > F(y'; z), evaluated in straightened coordinates
    X = Theta_eps x = (x - F e_{y1}) / eps (Jacobian eps^{-n}):

        numerator   int |grad Psi - Psi_{Y1} grad'F(eps Y'; eps Z)|^2 dX
        denominator int Psi^q |Y + F(eps Y'; eps Z)/eps e_1|^{-q(1-sigma)} dX

    with Psi(X) = phi(X) cut(eps |Y|, eps |Z|)."""
    _check_support(sol, eps, delta)
    Fr, Fg = _axisymmetric_parts(F)
    g = sol.grid
    v = sol.phi.values
    q, a = sol.q, sol.q * (1.0 - sol.sigma)
    # energy at the Gauss points of the grid rule
    rho, th, t = g.gauss_coords("rho"), g.gauss_coords("theta"), g.gauss_coords("t")
    ph = g.at_gauss(v)
    d_rho, d_th, d_t = g.grad_at_gauss(v)
    cy, cz = chi(eps * rho, delta), chi(eps * t, delta)
    c = cy * cz
    c_rho = eps * chi_prime(eps * rho, delta) * cz
    c_t = eps * cy * chi_prime(eps * t, delta)
    P_rho = d_rho * c + ph * c_rho
    P_th = d_th * c / rho
    P_t = d_t * c + ph * c_t
    cs, sn = np.cos(th), np.sin(th)
    P_y1 = cs * P_rho - sn * P_th
    P_r = sn * P_rho + cs * P_th
    Fr_, Ft_ = Fg(eps * rho * sn, eps * t)
    grad2 = P_rho ** 2 + P_th ** 2 + P_t ** 2
    dens = grad2 - 2 * P_y1 * (P_r * Fr_ + P_t * Ft_) + P_y1 ** 2 * (Fr_ ** 2 + Ft_ ** 2)
    N = float(np.sum(g.gauss_weights * dens))
    # weighted q-mass with the singular-adapted rule; the bent |y| enters as a
    # bounded ratio (|Y| / |y_bent|)^a
    quad = g.quadrature(ng_q or quad_points_for(q), -a)
    quad.check_support(v)
    rq, thq, tq = quad.coords("rho"), quad.coords("theta"), quad.coords("t")
    Psi = np.abs(quad.at(v)) * cutoff(eps * rq, eps * tq, delta)
    gb = Fr(eps * rq * np.sin(thq), eps * tq) / eps
    ratio = rq ** 2 / ((rq * np.cos(thq) + gb) ** 2 + (rq * np.sin(thq)) ** 2)
    D = float(np.sum(quad.weights * Psi ** q * ratio ** (a / 2)))
    return DirectQuotient(N / D ** (2.0 / q), N, D)


def straightening_map(F: BoundaryProfile, eps: float):
    """Theta_eps on Cartesian points x = (y1, y', z) in R^n."""
    m = F.m

    def theta(x):
        x = np.asarray(x, float)
        out = x / eps
        out[..., 0] = (x[..., 0] - F(x[..., 1:m], x[..., m:])) / eps
        return out
    return theta


def jacobian_determinant(F: BoundaryProfile, eps: float, x, h=1e-6):
    """det D Theta_eps at the points x by central differences."""
    th = straightening_map(F, eps)
    x = np.atleast_2d(np.asarray(x, float))
    n = x.shape[-1]
    out = np.empty(x.shape[0])
    for k, p in enumerate(x):
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            J[:, j] = (th(p + e) - th(p - e)) / (2 * h)
        out[k] = np.linalg.det(J)
    return out


# -- sweep and report -----------------------------------------------------------------

@dataclass
class AsymptoticsReport:
    eps: list
    f_eps: list
    A1: list
    A2: list
    ratio1: list             # eps A1 / f(eps)
    ratio2: list             # eps A2 / f(eps), or A2 / (eps^n int_eps^delta f/r^{n+2}) if critical
    quotient: list
    mu_sq: float
    regime: str
    delta: float
    direct: list = field(default_factory=list)
    direct_flat: list = field(default_factory=list)   # direct quotient with F = 0 (cut-off only)
    variation1: float = float("nan")                  # over the last three eps
    variation2: float = float("nan")
    hypotheses: dict = field(default_factory=dict)
    profile: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    COLUMNS = ("epsilon", "f_eps", "A1", "A2", "ratio1", "ratio2", "quotient", "mu_sq")

    def rows(self):
        for k in range(len(self.eps)):
            yield (self.eps[k], self.f_eps[k], self.A1[k], self.A2[k], self.ratio1[k],
                   self.ratio2[k], self.quotient[k], self.mu_sq)

    def expansion_gap(self) -> float:
        """Relative gap between assembled and direct quotients at the smallest eps."""
        if not self.direct:
            return float("nan")
        return abs(self.quotient[-1] - self.direct[-1]) / abs(self.direct[-1])

    def deviation_gap(self) -> float:
        """Same, for the deviations from mu^2 (direct one measured from the F = 0 run)."""
        if not self.direct:
            return float("nan")
        dq = self.quotient[-1] - self.mu_sq
        dd = self.direct[-1] - self.direct_flat[-1]
        return abs(dq - dd) / abs(dd)

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        d["expansion_gap"] = self.expansion_gap()
        d["deviation_gap"] = self.deviation_gap()
        return d

    def save(self, path, extra_header=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        js, cv = path.with_suffix(".json"), path.with_suffix(".csv")
        d = self.as_dict()
        if extra_header:
            d.update(extra_header)
        js.write_text(json.dumps(_jsonable(d), indent=1, sort_keys=True))
        with cv.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow(["%.17g" % x for x in row])
        return js, cv


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def variation(values) -> float:
    """(max - min) / |mean| over the last three entries."""
    v = np.asarray(values[-3:], float)
    if v.size < 3:
        return float("nan")
    return float((v.max() - v.min()) / abs(v.mean()))


def attainability(sol: HalfspaceSolution, F: BoundaryProfile, eps_list, delta=DEFAULT_DELTA,
                  direct=True, R=None) -> AsymptoticsReport:
    """A1, A2, assembled quotient (and the direct oracle) over a sweep of eps."""
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    regime = _regime_of(F)
    mu_sq = sol.mu_q ** 2
    bg = BoundaryGradient(sol)
    hyp = hypothesis_report(F, (min(eps_list) * 0.5, min(F.rho_max, 2 * delta)), delta=delta)
    cols = {k: [] for k in ("f", "A1", "A2", "r1", "r2", "Q", "D", "D0")}
    parts, Rs = [], []
    for e in eps_list:
        fe = float(average_f(F, e))
        A1 = compute_A1(sol, F, e, delta)
        a2 = compute_A2(sol, F, e, delta, regime, R=R, bg=bg)
        A2 = a2.value
        parts.append(a2.parts)
        Rs.append(a2.R)
        cols["f"].append(fe)
        cols["A1"].append(A1)
        cols["A2"].append(A2)
        cols["r1"].append(e * A1 / fe if fe else float("nan"))
        if regime == "critical":
            cols["r2"].append(A2 / (e ** sol.n * f_log_integral(F, e, delta)))
        else:
            cols["r2"].append(e * A2 / fe if fe else float("nan"))
        cols["Q"].append(assemble_quotient(mu_sq, A1, A2, sol.q))
        if direct:
            cols["D"].append(direct_bent_quotient(sol, F, e, delta).quotient)
            cols["D0"].append(direct_bent_quotient(sol, F.scaled(0.0), e, delta).quotient)
    rep = AsymptoticsReport(eps_list, cols["f"], cols["A1"], cols["A2"], cols["r1"], cols["r2"],
                            cols["Q"], mu_sq, regime, delta, cols["D"], cols["D0"],
                            variation(cols["r1"]), variation(cols["r2"]), hyp.as_dict(),
                            F.describe())
    rep.extras = {"A2_parts": parts, "M": sol.M, "R": Rs}
    return rep


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(_jsonable(obj), sort_keys=True).encode()).hexdigest()[:16]
