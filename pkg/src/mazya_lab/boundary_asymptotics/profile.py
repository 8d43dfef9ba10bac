"""Boundary graphs y1 = F(y'; z) near a contact point and their sphere averages.

y' ranges over R^{m-1}, z over R^{n-m}.  The averages

    f(rho)     mean of F over the sphere |(y', z)| = rho   (S^{n-2})
    f1(r, t)   mean of F over |y'| = r, |z| = t             (S^{m-2} x S^{n-m-1})
    f2(rho)    mean of |grad' F|^2 over S^{n-2}_rho

are computed by product Gauss rules on spheres; a rule is accepted only when
doubling it changes the value by at most 1e-6 relative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import beta as beta_fn, roots_jacobi

QUAD_RTOL = 1e-6


class QuadratureError(RuntimeError):
    pass


class ProfileKind(str, enum.Enum):
    QUADRATIC = "quadraticForm"
    POWER = "powerFamily"
    TABULATED = "axisymmetricTabulated"
    CALLABLE = "callable"


@dataclass(frozen=True)
class SlowlyVarying:
    """Slowly varying factor L(rho) = 1 or ln(1/rho)^k."""
    k: float = 0.0

    @property
    def constant(self) -> bool:
        return self.k == 0.0

    def __call__(self, rho):
        if self.k == 0.0:
            return np.ones_like(np.asarray(rho, float))
        with np.errstate(divide="ignore"):
            return np.log(1.0 / np.asarray(rho, float)) ** self.k

    def derivative(self, rho):
        if self.k == 0.0:
            return np.zeros_like(np.asarray(rho, float))
        rho = np.asarray(rho, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return -self.k * np.log(1.0 / rho) ** (self.k - 1.0) / rho

    def label(self) -> str:
        return "constant" if self.k == 0.0 else f"logPower({self.k:g})"

    @classmethod
    def parse(cls, s) -> "SlowlyVarying":
        if isinstance(s, SlowlyVarying):
            return s
        s = str(s).strip()
        if s in ("", "constant"):
            return cls()
        if s.startswith("logPower(") and s.endswith(")"):
            return cls(float(s[len("logPower("):-1]))
        raise ValueError(f"unknown slowly varying factor {s!r}")


# -- sphere rules -------------------------------------------------------------------

def sphere_rule(d: int, order: int):
    """Product Gauss rule for the mean over S^{d-1} in R^d.

    Returns (points (N, d), weights summing to 1).  Exact for polynomials of
    degree < 2 * order."""
    if d < 1:
        raise ValueError("need d >= 1")
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([0.5, 0.5])
    # x1 = u has density (1 - u^2)^{(d-3)/2} on [-1, 1]
    a = (d - 3) / 2.0
    u, w = roots_jacobi(order, a, a)
    w = w / w.sum()
    sub, sw = sphere_rule(d - 1, order)
    s = np.sqrt(np.clip(1.0 - u * u, 0.0, None))
    pts = np.concatenate([np.repeat(u, sub.shape[0])[:, None],
                          (s[:, None, None] * sub[None, :, :]).reshape(-1, d - 1)], axis=1)
    return pts, np.outer(w, sw).ravel()


def split_rule(m: int, n: int, order: int):
    """Rule on S^{n-2} in (y', z) coordinates: (yp, z, weights)."""
    pts, w = sphere_rule(n - 1, order)
    return pts[:, : m - 1], pts[:, m - 1:], w


def product_rule(m: int, n: int, order: int):
    """Rule on S^{m-2} x S^{n-m-1}: unit (yp, z) pairs with weights."""
    p1, w1 = sphere_rule(m - 1, order)
    p2, w2 = sphere_rule(n - m, order)
    yp = np.repeat(p1, p2.shape[0], axis=0)
    z = np.tile(p2, (p1.shape[0], 1))
    return yp, z, np.outer(w1, w2).ravel()


def beta_rule(m: int, n: int, order: int, extra_yp=0.0, extra_z=0.0):
    """Gauss rule in u = |z|^2 on the unit sphere S^{n-2}: u ~ Beta((n-m)/2, (m-1)/2).

    The optional powers (1-u)^{extra_yp/2} u^{extra_z/2} are absorbed into the
    weight, so the returned weights sum to E[|y'|^extra_yp |z|^extra_z]."""
    a = (m - 3 + extra_yp) / 2.0      # exponent of (1 - u)
    b = (n - m - 2 + extra_z) / 2.0   # exponent of u
    x, w = roots_jacobi(order, a, b)
    u = 0.5 * (1.0 + x)
    scale = beta_fn((m - 1) / 2.0, (n - m) / 2.0)
    w = w * 2.0 ** (-(a + b + 1.0)) / scale
    return u, w


def sphere_moment(m, n, a, b) -> float:
    """E[|y'|^a |z|^b] over the unit sphere S^{n-2}, closed form."""
    return float(beta_fn((m - 1 + a) / 2.0, (n - m + b) / 2.0)
                 / beta_fn((m - 1) / 2.0, (n - m) / 2.0))


def _doubled(fn, order, what):
    a = fn(order)
    b = fn(2 * order)
    scale = np.maximum(np.abs(a), np.abs(b))
    bad = np.abs(a - b) > QUAD_RTOL * scale + 1e-300
    if np.any(bad):
        raise QuadratureError(f"{what}: doubling the rule changed the value by "
                              f"{float(np.max(np.abs(a - b) / np.where(scale > 0, scale, 1))):.2e}")
    return b


# -- profiles -------------------------------------------------------------------------

@dataclass
class BoundaryProfile:
    """y1 = F(y'; z).

    quadraticForm  F = y'^T A y' + z^T B z                  params A, B
    powerFamily    F = (-c|y'|^alpha_y + d|z|^gamma) L(rho)  params c, alpha_y, d, gamma
    axisymmetricTabulated  F(r, t) on a tensor table        params r, t, values
    callable       F(yp, z) for arrays (..., m-1), (..., n-m); optional grad
    """
    kind: ProfileKind
    m: int
    n: int
    params: dict
    alpha: float                     # declared RVF order of f
    slowly_varying: SlowlyVarying = field(default_factory=SlowlyVarying)
    rho_max: float = 1.0             # validity radius of the local graph

    def __post_init__(self):
        self.kind = ProfileKind(self.kind)
        self.slowly_varying = SlowlyVarying.parse(self.slowly_varying)
        if not 2 <= self.m <= self.n - 1:
            raise ValueError("need 2 <= m <= n-1")
        if not 1.0 <= self.alpha <= self.n + 1:
            raise ValueError(f"RVF order must lie in [1, n+1], got {self.alpha}")
        P = self.params
        if self.kind is ProfileKind.QUADRATIC:
            A = np.atleast_2d(np.asarray(P.get("A", np.zeros((self.m - 1,) * 2)), float))
            B = np.atleast_2d(np.asarray(P.get("B", np.zeros((self.n - self.m,) * 2)), float))
            if A.shape != (self.m - 1,) * 2 or B.shape != (self.n - self.m,) * 2:
                raise ValueError("A must be (m-1)x(m-1) and B (n-m)x(n-m)")
            self.params = {"A": 0.5 * (A + A.T), "B": 0.5 * (B + B.T)}
            if not self.slowly_varying.constant:
                raise ValueError("quadratic profiles carry no slowly varying factor")
        elif self.kind is ProfileKind.POWER:
            self.params = {"c": float(P.get("c", 0.0)), "alpha_y": float(P.get("alpha_y", self.alpha)),
                           "d": float(P.get("d", 0.0)), "gamma": float(P.get("gamma", 2.0))}
            if self.params["alpha_y"] < 1 or self.params["gamma"] < 1:
                raise ValueError("powers below 1 give a non-C^1 graph")
        elif self.kind is ProfileKind.TABULATED:
            r = np.asarray(P["r"], float)
            t = np.asarray(P["t"], float)
            v = np.asarray(P["values"], float)
            if v.shape != (r.size, t.size):
                raise ValueError("values must have shape (len(r), len(t))")
            self.params = {"r": r, "t": t, "values": v}
            self.rho_max = min(self.rho_max, float(min(r[-1], t[-1])))
        elif self.kind is ProfileKind.CALLABLE:
            if not callable(P.get("F")):
                raise ValueError("callable profile needs params['F']")

    # -- constructors ----------------------------------------------------------------
    @classmethod
    def quadratic(cls, m, n, A=None, B=None, **kw):
        A = np.zeros((m - 1, m - 1)) if A is None else A
        B = np.zeros((n - m, n - m)) if B is None else B
        return cls(ProfileKind.QUADRATIC, m, n, {"A": A, "B": B}, kw.pop("alpha", 2.0), **kw)

    @classmethod
    def power(cls, m, n, c=0.0, alpha_y=2.0, d=0.0, gamma=2.0, slowly_varying="constant", **kw):
        alpha = kw.pop("alpha", min(alpha_y if c else math.inf, gamma if d else math.inf))
        if not math.isfinite(alpha):
            alpha = alpha_y
        return cls(ProfileKind.POWER, m, n, {"c": c, "alpha_y": alpha_y, "d": d, "gamma": gamma},
                   alpha, slowly_varying, **kw)

    @classmethod
    def critical_power(cls, m, n, **kw):
        """F = -c |y'|^{n+1} with c chosen so that f(rho) = -rho^{n+1}."""
        c = 1.0 / sphere_moment(m, n, n + 1, 0)
        return cls.power(m, n, c=c, alpha_y=n + 1.0, alpha=n + 1.0, **kw)

    @classmethod
    def zero(cls, m, n):
        return cls.quadratic(m, n)

    @classmethod
    def from_callable(cls, m, n, F, alpha, grad=None, **kw):
        return cls(ProfileKind.CALLABLE, m, n, {"F": F, "grad": grad}, alpha, **kw)

    def scaled(self, s: float) -> "BoundaryProfile":
        P = dict(self.params)
        if self.kind is ProfileKind.QUADRATIC:
            P = {"A": s * P["A"], "B": s * P["B"]}
        elif self.kind is ProfileKind.POWER:
            P["c"] *= s
            P["d"] *= s
        elif self.kind is ProfileKind.TABULATED:
            P["values"] = s * P["values"]
        else:
            F, G = P["F"], P.get("grad")
            P = {"F": lambda yp, z: s * F(yp, z),
                 "grad": None if G is None else (lambda yp, z: tuple(s * g for g in G(yp, z)))}
        return BoundaryProfile(self.kind, self.m, self.n, P, self.alpha, self.slowly_varying,
                               self.rho_max)

    @property
    def axisymmetric(self) -> bool:
        return self.kind in (ProfileKind.POWER, ProfileKind.TABULATED)

    @property
    def is_zero(self) -> bool:
        P = self.params
        if self.kind is ProfileKind.QUADRATIC:
            return not (np.any(P["A"]) or np.any(P["B"]))
        if self.kind is ProfileKind.POWER:
            return P["c"] == 0 and P["d"] == 0
        if self.kind is ProfileKind.TABULATED:
            return not np.any(P["values"])
        return False

    def describe(self) -> dict:
        P = {}
        for k, v in self.params.items():
            if callable(v) or v is None:
                continue
            P[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
        return {"kind": self.kind.value, "m": self.m, "n": self.n, "params": P,
                "alpha": self.alpha, "slowly_varying": self.slowly_varying.label(),
                "rho_max": self.rho_max}

    # -- point evaluation -------------------------------------------------------------
    @cached_property
    def _spline(self):
        P = self.params
        return RectBivariateSpline(P["r"], P["t"], P["values"], kx=3, ky=3)

    def radial(self, r, t):
        """F as a function of (|y'|, |z|) for the axisymmetric kinds."""
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        if self.kind is ProfileKind.POWER:
            P = self.params
            base = -P["c"] * r ** P["alpha_y"] + P["d"] * t ** P["gamma"]
            if self.slowly_varying.constant:
                return base
            rho = np.hypot(r, t)
            return np.where(rho > 0, base * self.slowly_varying(np.where(rho > 0, rho, 1.0)), 0.0)
        if self.kind is ProfileKind.TABULATED:
            return self._spline.ev(r, t)
        raise TypeError(f"{self.kind.value} profiles are not axisymmetric")

    def radial_grad(self, r, t):
        """(dF/dr, dF/dt) for the axisymmetric kinds."""
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        if self.kind is ProfileKind.POWER:
            P = self.params
            ay, g = P["alpha_y"], P["gamma"]
            base = -P["c"] * r ** ay + P["d"] * t ** g
            with np.errstate(divide="ignore", invalid="ignore"):
                br = np.where(r > 0, -P["c"] * ay * r ** (ay - 1), 0.0 if ay > 1 else -P["c"])
                bt = np.where(t > 0, P["d"] * g * t ** (g - 1), 0.0 if g > 1 else P["d"])
            if self.slowly_varying.constant:
                return br, bt
            rho = np.hypot(r, t)
            safe = np.where(rho > 0, rho, 1.0)
            L, dL = self.slowly_varying(safe), self.slowly_varying.derivative(safe)
            gr = np.where(rho > 0, br * L + base * dL * r / safe, 0.0)
            gt = np.where(rho > 0, bt * L + base * dL * t / safe, 0.0)
            return gr, gt
        if self.kind is ProfileKind.TABULATED:
            return self._spline.ev(r, t, dx=1), self._spline.ev(r, t, dy=1)
        raise TypeError(f"{self.kind.value} profiles are not axisymmetric")

    def __call__(self, yp, z):
        yp = np.asarray(yp, float)
        z = np.asarray(z, float)
        if self.kind is ProfileKind.QUADRATIC:
            A, B = self.params["A"], self.params["B"]
            return np.einsum("...i,ij,...j->...", yp, A, yp) + np.einsum("...i,ij,...j->...", z, B, z)
        if self.kind is ProfileKind.CALLABLE:
            return np.asarray(self.params["F"](yp, z), float)
        return self.radial(np.linalg.norm(yp, axis=-1), np.linalg.norm(z, axis=-1))

    def grad(self, yp, z):
        """(grad_{y'} F, grad_z F) at Cartesian points."""
        yp = np.asarray(yp, float)
        z = np.asarray(z, float)
        if self.kind is ProfileKind.QUADRATIC:
            return 2 * yp @ self.params["A"], 2 * z @ self.params["B"]
        if self.kind is ProfileKind.CALLABLE:
            G = self.params.get("grad")
            if G is not None:
                gy, gz = G(yp, z)
                return np.asarray(gy, float), np.asarray(gz, float)
            return self._fd_grad(yp, z)
        r = np.linalg.norm(yp, axis=-1)
        t = np.linalg.norm(z, axis=-1)
        gr, gt = self.radial_grad(r, t)
        with np.errstate(invalid="ignore", divide="ignore"):
            ey = np.where(r[..., None] > 0, yp / r[..., None], 0.0)
            ez = np.where(t[..., None] > 0, z / t[..., None], 0.0)
        return gr[..., None] * ey, gt[..., None] * ez

    def _fd_grad(self, yp, z, h=1e-6):
        gy = np.empty_like(yp)
        gz = np.empty_like(z)
        for k in range(yp.shape[-1]):
            e = np.zeros(yp.shape[-1])
            e[k] = h
            gy[..., k] = (self(yp + e, z) - self(yp - e, z)) / (2 * h)
        for k in range(z.shape[-1]):
            e = np.zeros(z.shape[-1])
            e[k] = h
            gz[..., k] = (self(yp, z + e) - self(yp, z - e)) / (2 * h)
        return gy, gz

    # -- fast f1 for array arguments ---------------------------------------------------
    def f1_values(self, r, t):
        """f1 on arrays (closed form, exact radial, or a tabulated spline for
        callable profiles)."""
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        if self.kind is ProfileKind.QUADRATIC:
            A, B = self.params["A"], self.params["B"]
            return np.trace(A) / (self.m - 1) * r ** 2 + np.trace(B) / (self.n - self.m) * t ** 2
        if self.axisymmetric:
            return self.radial(r, t)
        if np.any(r > 2 * self.rho_max) or np.any(t > 2 * self.rho_max):
            raise ValueError("f1 requested outside the tabulated validity range")
        return self._f1_table.ev(r, t)

    @cached_property
    def _f1_table(self):
        x = np.linspace(0.0, 2 * self.rho_max, 161)
        R, T = np.meshgrid(x, x, indexing="ij")
        vals = average_f1(self, R.ravel(), T.ravel()).reshape(R.shape)
        return RectBivariateSpline(x, x, vals, kx=3, ky=3)

    def f2_integrand(self, yp, z):
        gy, gz = self.grad(yp, z)
        return np.sum(gy * gy, axis=-1) + np.sum(gz * gz, axis=-1)

    # -- invariants -------------------------------------------------------------------
    def check_invariants(self, rho_max=None, order=12, n_radii=12) -> dict:
        """F(0; z) >= 0 and |F| <= (|y'| + |z|)/2 on the sampled range."""
        R = rho_max or self.rho_max
        yp, z, _ = split_rule(self.m, self.n, order)
        worst_sign = 0.0
        worst_bound = -np.inf
        for rho in np.geomspace(R * 1e-3, R, n_radii):
            v = self(rho * yp, rho * z)
            lim = 0.5 * (np.linalg.norm(rho * yp, axis=-1) + np.linalg.norm(rho * z, axis=-1))
            worst_bound = max(worst_bound, float(np.max(np.abs(v) - lim)))
            zz, _ = sphere_rule(self.n - self.m, order)
            v0 = self(np.zeros((zz.shape[0], self.m - 1)), rho * zz)
            worst_sign = min(worst_sign, float(np.min(v0)))
        return {"F0_nonnegative": worst_sign >= -1e-14, "min_F0": worst_sign,
                "graph_bound": worst_bound <= 1e-14, "max_excess": worst_bound}


# -- averages ---------------------------------------------------------------------------

def _check_rho(F: BoundaryProfile, rho):
    rho = np.asarray(rho, float)
    if np.any(rho < 0) or np.any(rho > F.rho_max * (1 + 1e-12)):
        raise ValueError(f"rho outside the validity range [0, {F.rho_max}]")
    return rho


def _power_moments(F: BoundaryProfile, rho, grad=False):
    """Exact sphere means for the power family (monomial moments)."""
    P = F.params
    c, ay, d, g = P["c"], P["alpha_y"], P["d"], P["gamma"]
    L = F.slowly_varying
    rho = np.asarray(rho, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        Lr = np.where(rho > 0, L(np.where(rho > 0, rho, 1.0)), 0.0 if not L.constant else 1.0)
        dLr = np.where(rho > 0, L.derivative(np.where(rho > 0, rho, 1.0)), 0.0)
    mom = lambda a, b: sphere_moment(F.m, F.n, a, b)
    if not grad:
        return Lr * (-c * rho ** ay * mom(ay, 0) + d * rho ** g * mom(0, g))
    # |grad'F|^2 = (F_r)^2 + (F_t)^2 on the sphere |(r, t)| = rho, expanded in monomials
    # F_r = -c ay r^{ay-1} L + P L' r / rho,  F_t = d g t^{g-1} L + P L' t / rho,
    # P = -c r^ay + d t^g,  and r^2 + t^2 = rho^2 gives (L'/rho)^2 P^2 rho^2 for the last terms
    terms = (c * c * ay * ay * rho ** (2 * ay - 2) * mom(2 * ay - 2, 0)
             + d * d * g * g * rho ** (2 * g - 2) * mom(0, 2 * g - 2)) * Lr ** 2
    if not L.constant:
        P2 = (c * c * rho ** (2 * ay) * mom(2 * ay, 0) - 2 * c * d * rho ** (ay + g) * mom(ay, g)
              + d * d * rho ** (2 * g) * mom(0, 2 * g))
        # cross terms 2 L L'/rho * (F_r-part * r + F_t-part * t) * P
        cross = (-c * ay * rho ** (ay) * (-c * rho ** ay * mom(2 * ay, 0) + d * rho ** g * mom(ay, g))
                 + d * g * rho ** g * (-c * rho ** ay * mom(ay, g) + d * rho ** g * mom(0, 2 * g)))
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = terms + np.where(rho > 0, dLr ** 2 * P2 + 2 * Lr * dLr * cross / np.where(rho > 0, rho, 1.0), 0.0)
    return terms


def average_f(F: BoundaryProfile, rho, order=12, method="auto"):
    """Mean of F over the sphere of radius rho in (y', z)-space."""
    rho = _check_rho(F, rho)
    if F.kind is ProfileKind.POWER and method in ("auto", "moments"):
        return _power_moments(F, rho)
    if F.axisymmetric and method == "auto":
        def fn(k):
            u, w = beta_rule(F.m, F.n, k)
            rr = rho[..., None] * np.sqrt(1.0 - u)
            tt = rho[..., None] * np.sqrt(u)
            return np.sum(F.radial(rr, tt) * w, axis=-1)
        return _doubled(fn, max(order, 32), "average_f")

    def fn(k):
        yp, z, w = split_rule(F.m, F.n, k)
        r = np.reshape(rho, rho.shape + (1, 1))
        return np.sum(F(r * yp, r * z) * w, axis=-1)
    return _doubled(fn, order, "average_f")


def average_f1(F: BoundaryProfile, r, t, order=12):
    """Mean of F over the product sphere |y'| = r, |z| = t."""
    r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))

    def fn(k):
        yp, z, w = product_rule(F.m, F.n, k)
        return np.sum(F(r[..., None, None] * yp, t[..., None, None] * z) * w, axis=-1)
    return _doubled(fn, order, "average_f1")


def average_f2(F: BoundaryProfile, rho, order=12, method="auto"):
    """Mean of |grad' F|^2 over the sphere of radius rho."""
    rho = _check_rho(F, rho)
    if F.kind is ProfileKind.POWER and method in ("auto", "moments"):
        return _power_moments(F, rho, grad=True)

    def fn(k):
        yp, z, w = split_rule(F.m, F.n, k)
        r = np.reshape(rho, rho.shape + (1, 1))
        return np.sum(F.f2_integrand(r * yp, r * z) * w, axis=-1)
    return _doubled(fn, order, "average_f2")


def fubini_f(F: BoundaryProfile, rho, order=48):
    """f rebuilt from f1 by the beta sweep (|y'|, |z|) = rho (cos b, sin b)."""
    rho = np.asarray(rho, float)
    u, w = beta_rule(F.m, F.n, order)
    rr = rho[..., None] * np.sqrt(1.0 - u)
    tt = rho[..., None] * np.sqrt(u)
    return np.sum(average_f1(F, rr, tt) * w, axis=-1)


# -- Phi(beta) ------------------------------------------------------------------------

@dataclass
class PhiEstimate:
    beta: np.ndarray
    values: np.ndarray
    error: np.ndarray          # change between the last two extrapolants
    converged: bool
    eps: np.ndarray


def phi_beta(F: BoundaryProfile, betas, eps0=None, levels=6, tol=1e-4) -> PhiEstimate:
    """Phi(beta) = lim f1(eps cos b, eps sin b) / f(eps), by Richardson in eps.

    The finite-eps ratios are extrapolated assuming an expansion in powers of
    eps; when the last two extrapolants disagree beyond tol the estimate is
    flagged as not converged (slowly varying corrections do not extrapolate)."""
    betas = np.asarray(betas, float)
    eps0 = eps0 or 0.5 * F.rho_max
    eps = eps0 * 2.0 ** -np.arange(levels)
    rows = []
    for e in eps:
        fe = float(average_f(F, e))
        if fe == 0.0:
            raise ZeroDivisionError(f"f vanishes at eps = {e:g}")
        rows.append(F.f1_values(e * np.cos(betas), e * np.sin(betas)) / fe)
    T = [np.array(rows)]
    # Neville table in h = eps (order 1, 2, ...)
    for k in range(1, levels):
        prev = T[-1]
        fac = 2.0 ** k
        T.append((fac * prev[1:] - prev[:-1]) / (fac - 1.0))
    best = T[-1][0]
    err = np.abs(T[-1][0] - T[-2][-1])
    scale = np.maximum(np.abs(best), 1.0)
    return PhiEstimate(betas, best, err, bool(np.all(err <= tol * scale)), eps)


# -- hypothesis report ----------------------------------------------------------------

@dataclass
class ProfileAverages:
    rho: np.ndarray
    f: np.ndarray
    f1: np.ndarray             # f1(rho cos b, rho sin b) on the (rho, beta) table
    f2: np.ndarray
    beta: np.ndarray
    Phi: np.ndarray
    Phi_error: np.ndarray
    Phi_converged: bool


def profile_averages(F: BoundaryProfile, rho, betas=None, Phi_levels=6) -> ProfileAverages:
    rho = np.asarray(rho, float)
    betas = np.linspace(0.0, math.pi / 2, 17) if betas is None else np.asarray(betas, float)
    f = average_f(F, rho)
    f2 = average_f2(F, rho)
    f1 = F.f1_values(rho[:, None] * np.cos(betas), rho[:, None] * np.sin(betas))
    ph = phi_beta(F, betas, levels=Phi_levels)
    return ProfileAverages(rho, f, f1, f2, betas, ph.values, ph.error, ph.converged)


@dataclass
class HypothesisReport:
    rho: list
    f: list
    average_concave: bool               # f < 0 on the range
    eq11_constant: float                # sup of the weighted |f1| / |f|
    eq11_bounded: bool
    eq4_values: list                    # f2 rho / f
    eq4_slope: float
    eq4_holds: bool
    Phi: list
    Phi_min: float
    Phi_converged: bool
    directional_concave: bool           # f < 0 and Phi >= 0
    invariants: dict
    regime: str                         # subcritical | critical
    divergence: str                     # divergent | convergent | not-applicable
    divergence_increments: list
    theorem: str                        # which attainability criterion is met, or "none"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def divergence_verdict(F: BoundaryProfile, delta=0.25, levels=40):
    """int_0^delta f(r) / r^{n+2} dr: analytic verdict from the declared RVF
    data, with dyadic increments of the numeric integral as a trend check."""
    n = F.n
    xg, wg = np.polynomial.legendre.leggauss(12)
    inc = []
    hi = delta
    for _ in range(levels):
        lo = hi / 2
        s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg
        inc.append(float(0.5 * (hi - lo) * np.sum(wg * average_f(F, s) / s ** (n + 2))))
        hi = lo
    if F.alpha < n + 1:
        verdict = "divergent"
    else:
        verdict = "divergent" if F.slowly_varying.k >= -1 else "convergent"
    return verdict, inc


def hypothesis_report(F: BoundaryProfile, rho_range=None, n_rho=13, n_beta=17,
                      delta=0.25) -> HypothesisReport:
    lo, hi = rho_range or (F.rho_max * 1e-3, F.rho_max)
    rho = np.geomspace(lo, hi, n_rho)
    betas = np.linspace(0.0, math.pi / 2, n_beta)
    m, n = F.m, F.n
    f = average_f(F, rho)
    concave = bool(np.all(f < 0))
    # (eq11): cos^{m-2} sin^{n-m-1} |f1(rho cos, rho sin)| <= C |f(rho)|
    c, s = np.cos(betas), np.sin(betas)
    f1 = F.f1_values(rho[:, None] * c, rho[:, None] * s)
    wfac = c ** (m - 2) * s ** (n - m - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.max(wfac * np.abs(f1), axis=1) / np.abs(f)
    C = float(np.max(ratio)) if np.all(np.isfinite(ratio)) else math.inf
    third = max(1, n_rho // 3)
    bounded = bool(math.isfinite(C) and np.max(ratio[:third]) <= 2 * np.max(ratio[third:]) + 1e-12)
    # (eq4): f2 rho / f -> 0
    f2 = average_f2(F, rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        e4 = f2 * rho / f
    a = np.abs(e4)
    if np.all(a > 0) and np.all(np.isfinite(a)):
        slope = float(np.polyfit(np.log(rho), np.log(a), 1)[0])
    else:
        slope = math.inf if np.all(a[np.isfinite(a)] == 0) else float("nan")
    e4_holds = bool(np.all(np.isfinite(e4)) and (slope > 0.05 or np.all(a == 0)))
    # (eq2): Phi >= 0
    try:
        ph = phi_beta(F, betas)
        Phi, Phi_conv = ph.values, ph.converged
    except ZeroDivisionError:
        Phi, Phi_conv = np.full(n_beta, np.nan), False
    Phi_min = float(np.nanmin(Phi)) if np.any(np.isfinite(Phi)) else float("nan")
    directional = concave and bool(Phi_min >= -1e-10)
    regime = "critical" if F.alpha >= n + 1 else "subcritical"
    if regime == "critical":
        div, inc = divergence_verdict(F, delta)
    else:
        div, inc = "not-applicable", []
    inv = F.check_invariants(hi)
    if regime == "subcritical" and directional and bounded and e4_holds:
        thm = "subcritical attainability"
    elif regime == "critical" and concave and bounded and e4_holds and div == "divergent":
        thm = "critical attainability"
    else:
        thm = "none"
    return HypothesisReport(rho.tolist(), f.tolist(), concave, C, bounded, e4.tolist(), slope,
                            e4_holds, Phi.tolist(), Phi_min, Phi_conv, directional, inv, regime,
                            div, inc, thm)


# -- regular variation ------------------------------------------------------------------

@dataclass
class RVFCheck:
    eps: np.ndarray
    ratios: np.ndarray          # f(eps t) / f(eps)
    orders: np.ndarray          # log(ratio) / log(t)
    fitted_alpha: float         # log-log regression of |f| on eps
    t: float


def rvf_ratio_check(f, t: float, eps) -> RVFCheck:
    """f: callable rho -> f(rho), or a BoundaryProfile (its sphere mean)."""
    if isinstance(f, BoundaryProfile):
        prof = f
        f = lambda x: average_f(prof, x)
    eps = np.asarray(eps, float)
    if t <= 0 or t == 1:
        raise ValueError("need t > 0, t != 1")
    fe = np.array([float(f(e)) for e in eps])
    ft = np.array([float(f(e * t)) for e in eps])
    ratios = ft / fe
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(ratios) / math.log(t)
    alpha = float(np.polyfit(np.log(eps), np.log(np.abs(fe)), 1)[0])
    return RVFCheck(eps, ratios, orders, alpha, t)
