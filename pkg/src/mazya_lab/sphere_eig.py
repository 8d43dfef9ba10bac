"""Spherical-cap eigenvalue of the p-Laplace type functional on geodesic caps.

For a cap G = {theta < theta0} of S^{m-1} and c = (m-p)/p the problem reduces
to theta-profiles v with weight sin^{m-2}(theta):

    Lambda = min  int (c^2 v^2 + v'^2)^{p/2} sin^{m-2} / int |v|^p sin^{m-2}

discretised with continuous P1 elements on a uniform theta grid.  p = 2 is a
generalized tridiagonal eigenproblem solved by inverse iteration; general p
uses preconditioned normalized gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicSpline

from .core.grid import GridFunction
from .core.functionals import energy_and_gradient
from .core.params import sphere_area


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class CapGeometry:
    m: int
    theta0: float
    is_full_sphere: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if not 0.0 < self.theta0 <= math.pi:
            raise ValueError("theta0 must lie in (0, pi]")
        if self.is_full_sphere and self.theta0 != math.pi:
            raise ValueError("a full sphere has theta0 = pi")

    @classmethod
    def full(cls, m):
        return cls(m, math.pi, True)

    def check(self, p: float):
        if p >= self.m and self.is_full_sphere:
            raise ValueError("p >= m needs a cone K different from R^m")


@dataclass(frozen=True, eq=False)
class SphericalEigenResult:
    lam: float
    theta: np.ndarray
    profile: np.ndarray
    p: float
    cap: CapGeometry
    method: str = "descent"
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def resolution(self) -> int:
        return self.theta.size - 1

    def interpolant(self):
        """Cubic spline of V-hat with the even extension at theta = 0."""
        th = np.concatenate([-self.theta[:0:-1], self.theta])
        v = np.concatenate([self.profile[:0:-1], self.profile])
        return CubicSpline(th, v)


# -- weighted P1 matrices ------------------------------------------------------

def _antider(k, j, x):
    """Antiderivative of x^j sin^k x for k <= 2, j <= 2."""
    s, c = np.sin(x), np.cos(x)
    if k == 0:
        return x ** (j + 1) / (j + 1)
    if k == 1:
        return (-c, s - x * c, 2 * x * s - (x * x - 2) * c)[j]
    s2, c2 = np.sin(2 * x), np.cos(2 * x)
    return (x / 2 - s2 / 4,
            x * x / 4 - x * s2 / 4 - c2 / 8,
            x ** 3 / 6 - (x * x / 4 - 0.125) * s2 - x * c2 / 4)[j]


def _local_moments(a, b, k):
    """mu_j = int_a^b sin^k(x) (x-a)^j dx, j = 0, 1, 2."""
    if k <= 2 and k == int(k):
        I = [(_antider(int(k), j, b) - _antider(int(k), j, a)) for j in range(3)]
        return I[0], I[1] - a * I[0], I[2] - 2 * a * I[1] + a * a * I[0]
    xg, wg = np.polynomial.legendre.leggauss(4)
    h = b - a
    s = 0.5 * (xg[None, :] + 1) * h[:, None]
    w = 0.5 * h[:, None] * wg * np.sin(a[:, None] + s) ** k
    return w.sum(1), (w * s).sum(1), (w * s * s).sum(1)


def p1_matrices(theta, k):
    """Tridiagonal weighted stiffness K and mass M as (lower, diag, upper)."""
    a, b = theta[:-1], theta[1:]
    h = b - a
    mu0, mu1, mu2 = _local_moments(a, b, k)
    M00 = mu0 - 2 * mu1 / h + mu2 / h ** 2
    M01 = mu1 / h - mu2 / h ** 2
    M11 = mu2 / h ** 2
    K0 = mu0 / h ** 2
    N = theta.size
    Md = np.zeros(N)
    Kd = np.zeros(N)
    Md[:-1] += M00
    Md[1:] += M11
    Kd[:-1] += K0
    Kd[1:] += K0
    return (-K0, Kd, -K0), (M01, Md, M01)


def _banded(parts, idx):
    lo, di, up = parts
    n = idx.size
    ab = np.zeros((3, n))
    ab[1] = di[idx]
    ab[0, 1:] = up[idx[:-1]]
    ab[2, :-1] = lo[idx[:-1]]
    return ab


def _tri_matvec(parts, v):
    lo, di, up = parts
    out = di * v
    out[:-1] += up * v[1:]
    out[1:] += lo * v[:-1]
    return out


# -- Gauss-point quotient used for general p ------------------------------------

class CapQuotient:
    """Discrete functional on P1 theta-profiles with 4-point Gauss per cell."""

    def __init__(self, theta, m, p, eta=0.0, ngauss=4):
        self.theta, self.m, self.p, self.eta = theta, m, p, eta
        self.c2 = ((m - p) / p) ** 2
        xg, wg = np.polynomial.legendre.leggauss(ngauss)
        a, b = theta[:-1], theta[1:]
        h = b - a
        s = 0.5 * (xg + 1.0)
        self.h = h
        self.s = s
        th = a[:, None] + s[None, :] * h[:, None]
        self.w = 0.5 * h[:, None] * wg[None, :] * np.sin(th) ** (m - 2)

    def parts(self, v):
        vg = v[:-1, None] * (1 - self.s) + v[1:, None] * self.s
        dv = ((v[1:] - v[:-1]) / self.h)[:, None]
        return vg, dv

    def values(self, v, eta=None):
        eta = self.eta if eta is None else eta
        vg, dv = self.parts(v)
        N = np.sum(self.w * (self.c2 * vg * vg + dv * dv + eta) ** (self.p / 2))
        D = np.sum(self.w * np.abs(vg) ** self.p)
        return N, D

    def quotient(self, v):
        N, D = self.values(v, eta=0.0)
        return N / D

    def gradients(self, v):
        p = self.p
        vg, dv = self.parts(v)
        s2 = self.c2 * vg * vg + dv * dv + self.eta
        a = self.w * s2 ** (p / 2 - 1)
        N = np.sum(self.w * s2 ** (p / 2))
        D = np.sum(self.w * np.abs(vg) ** p)
        gN_v = p * a * self.c2 * vg
        gN_d = p * np.sum(a * dv, axis=1) / self.h
        gD_v = p * self.w * np.abs(vg) ** (p - 1) * np.sign(vg)
        gN = np.zeros_like(v)
        gD = np.zeros_like(v)
        gN[:-1] += np.sum(gN_v * (1 - self.s), 1) - gN_d
        gN[1:] += np.sum(gN_v * self.s, 1) + gN_d
        gD[:-1] += np.sum(gD_v * (1 - self.s), 1)
        gD[1:] += np.sum(gD_v * self.s, 1)
        return N, D, gN, gD, a

    def preconditioner(self, a):
        """Tridiagonal K_a + c^2 M_a with Gauss-point coefficient a."""
        s, h = self.s, self.h
        Kc = np.sum(a, 1) / h ** 2
        M00 = np.sum(a * (1 - s) ** 2, 1)
        M01 = np.sum(a * (1 - s) * s, 1)
        M11 = np.sum(a * s * s, 1)
        N = self.theta.size
        di = np.zeros(N)
        di[:-1] += Kc + self.c2 * M00
        di[1:] += Kc + self.c2 * M11
        off = -Kc + self.c2 * M01
        return off, di, off


def _normalize(theta, v, m, p):
    """Scale so that int_G |V|^p dS = 1 (dS = omega_{m-2} sin^{m-2} dtheta)."""
    q = CapQuotient(theta, m, p)
    _, D = q.values(v, eta=0.0)
    return v / (sphere_area(m - 2) * D) ** (1.0 / p)


def _initial(theta, cap):
    t0 = cap.theta0
    return np.cos(np.pi * theta / (2 * t0)) if not cap.is_full_sphere else 1.0 + 0.0 * theta


def lambda_p_cap(p: float, cap: CapGeometry, resolution: int = 256, method: str = "auto",
                 eta: float = 1e-12, max_iter: int = 5000, tol: float = 1e-13) -> SphericalEigenResult:
    """Lambda^(p)(G) and its normalized profile on a theta grid with `resolution` cells."""
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    if p <= 1:
        raise ValueError("need p > 1")
    cap.check(p)
    if method == "auto":
        method = "inverse" if p == 2 else "descent"
    theta = np.linspace(0.0, cap.theta0, resolution + 1)
    free = np.ones(theta.size, bool)
    if not cap.is_full_sphere:
        free[-1] = False
    idx = np.nonzero(free)[0]
    if method == "inverse":
        if p != 2:
            raise ValueError("inverse iteration is the p = 2 path")
        return _inverse_iteration(theta, cap, idx, max_iter, tol)
    return _descent(p, theta, cap, idx, eta, max_iter, tol)


def _inverse_iteration(theta, cap, idx, max_iter, tol):
    m = cap.m
    c2 = ((m - 2) / 2.0) ** 2
    Kp, Mp = p1_matrices(theta, m - 2)
    Ap = tuple(k + c2 * mm for k, mm in zip(Kp, Mp))
    ab = _banded(Ap, idx)
    Mf = tuple(x.copy() for x in Mp)
    v = _initial(theta, cap)[idx]
    sub = lambda parts, x: _tri_matvec(tuple(pp[idx[:-1]] if pp.size != theta.size else pp[idx]
                                              for pp in parts), x)
    lam_old = np.inf
    hist = []
    for it in range(1, max_iter + 1):
        Mv = sub(Mf, v)
        v = sla.solve_banded((1, 1), ab, Mv)
        v /= math.sqrt(v @ sub(Mf, v))
        lam = (v @ sub(Ap, v)) / (v @ sub(Mf, v))
        hist.append(lam)
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    else:
        raise ConvergenceError("inverse iteration did not converge")
    full = np.zeros(theta.size)
    full[idx] = np.abs(v) if v[0] >= 0 else -v
    full = np.abs(full)
    full = _normalize(theta, full, m, 2.0)
    return SphericalEigenResult(float(lam), theta, full, 2.0, cap, "inverse", it, hist)


def _descent(p, theta, cap, idx, eta, max_iter, tol):
    m = cap.m
    Q = CapQuotient(theta, m, p, eta=eta)
    v = np.zeros(theta.size)
    v[idx] = _initial(theta, cap)[idx]
    free = np.zeros(theta.size, bool)
    free[idx] = True
    v = _normalize(theta, v, m, p)
    hist = []
    F_old = np.inf
    stall = 0
    for it in range(1, max_iter + 1):
        N, D, gN, gD, a = Q.gradients(v)
        F = math.log(N) - math.log(D)
        gF = (gN / N - gD / D)[idx]
        P = Q.preconditioner(a)
        ab = _banded(P, idx)
        ab[1] += 1e-14 * ab[1].max()
        d = -sla.solve_banded((1, 1), ab, gF)
        slope = gF @ d
        tau = N / p
        for _ in range(60):
            w = v.copy()
            w[idx] += tau * d
            w = np.abs(w)
            N2, D2 = Q.values(w)
            F2 = math.log(N2) - math.log(D2)
            if F2 <= F + 1e-4 * tau * slope:
                break
            tau *= 0.5
        else:
            F2 = F
            w = v
        v = _normalize(theta, w, m, p)
        hist.append(Q.quotient(v))
        if F_old - F2 <= tol * max(1.0, abs(F2)):
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
        F_old = F2
    else:
        raise ConvergenceError(f"descent did not converge in {max_iter} iterations")
    lam = Q.quotient(v)
    return SphericalEigenResult(float(lam), theta, v, float(p), cap, "descent", it, hist)


def richardson(values, ratio: float = 2.0):
    """Extrapolated value and observed order from three successive refinements."""
    a, b, c = values
    d1, d2 = b - a, c - b
    scale = max(abs(c), 1e-300)
    if abs(d2) <= 64 * np.finfo(float).eps * scale:
        return c, float("inf")
    if d1 == 0.0 or d1 * d2 <= 0:
        return c, float("nan")
    order = math.log(abs(d1 / d2)) / math.log(ratio)
    return c + d2 / (ratio ** order - 1.0), order


def lambda_p_cap_extrapolated(p, cap, resolution=128, levels=3, **kw):
    res = [lambda_p_cap(p, cap, resolution * 2 ** k, **kw) for k in range(levels)]
    val, order = richardson([r.lam for r in res[-3:]])
    return val, order, res


def sharp_constant_theorem1(result: SphericalEigenResult) -> float:
    return result.lam ** (-1.0 / result.p)


def separable_profile(result: SphericalEigenResult, grid, report: bool = True):
    """U = |y|^{1-m/p} V-hat(theta) on a (rho, theta[, t]) grid.

    Returns (GridFunction, relative weak residual of the p-Laplace equation
    against interior test functions)."""
    if "rho" not in grid.names or "theta" not in grid.names:
        raise ValueError("grid needs rho and theta axes")
    cap, p, m = result.cap, result.p, result.cap.m
    rho = grid.node_coords("rho")
    th = grid.node_coords("theta")
    if rho.min() <= 0:
        raise ValueError("grid must cover a truncated cone (rho > 0)")
    if th.max() > cap.theta0 + 1e-12:
        raise ValueError("grid extends beyond the cap")
    spline = result.interpolant()
    V = np.clip(spline(th), 0.0, None)
    U = np.broadcast_to(rho ** (1.0 - m / p) * V, grid.shape).copy()
    mask = np.zeros(grid.shape, bool)
    if not cap.is_full_sphere:
        mask |= np.broadcast_to(np.isclose(th, cap.theta0, rtol=0, atol=1e-12), grid.shape)
    U[mask] = 0.0
    gf = GridFunction(grid, U, mask)
    if not report:
        return gf, float("nan")
    return gf, profile_residual(gf, result.lam, p)


def profile_residual(U: GridFunction, lam: float, p: float) -> float:
    grid = U.grid
    _, gE = energy_and_gradient(grid, U.values, p)
    W = grid.lumped_weights(-p)
    rhs = lam * W * np.abs(U.values) ** (p - 1)
    test = ~U.mask
    i = grid.index("rho")
    sl = [slice(None)] * grid.ndim
    for end in (0, -1):
        sl[i] = end
        test[tuple(sl)] = False
    if "t" in grid.names:
        sl = [slice(None)] * grid.ndim
        sl[grid.index("t")] = -1
        test[tuple(sl)] = False
    r = gE / p - rhs
    return float(np.linalg.norm(r[test]) / np.linalg.norm(rhs[test]))
