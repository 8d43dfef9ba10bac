"""Normalized, preconditioned gradient flow for the discrete quotient

    J(u) = E(u)^{1/p} / S(u)^{1/q},   E = sum_g w_g |grad u|^p,   S = sum_i W_i |u_i|^q

Descent acts on F = log(E)/p - log(S)/q with a Sobolev preconditioner P (the
reweighted stiffness at the current iterate).  With P = A(u) and step E the
update is exactly the nonlinear inverse power step; Armijo backtracking makes
every accepted step decrease J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import energy_and_gradient, fsum
from .linalg import SparseSolver, TensorSolver, is_tensor_mask


class ConvergenceError(RuntimeError):
    pass


@dataclass
class FlowOptions:
    max_iter: int = 400
    tol: float = 1e-11
    residual_tol: float = 1e-9
    eta: float = 1e-12
    method: str = "lbfgs"         # "lbfgs", "flow" (steepest) or "power" (p = 2 only)
    memory: int = 10
    refresh: int = 1              # preconditioner refresh interval when p != 2
    armijo: float = 1e-4
    raise_on_budget: bool = False


@dataclass
class FlowResult:
    u: np.ndarray
    J: float
    E: float
    S: float
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    residual: float = float("nan")


class QuotientProblem:
    def __init__(self, grid, mask, p, q, sigma, eta=1e-12, ng=None):
        from .functionals import quad_points_for
        self.grid, self.mask, self.p, self.q = grid, np.asarray(mask, bool), p, q
        self.sigma = sigma
        self.free = ~self.mask
        self.quad = grid.quadrature(ng or quad_points_for(q), (sigma - 1.0) * q)
        self.eta = eta if p != 2 else 0.0
        self._tensor = is_tensor_mask(self.mask)
        self._solver2 = None

    def S(self, u):
        return self.quad.integral(u, self.q)

    def source(self, u):
        """dS/du / q."""
        _, g = self.quad.integral_and_gradient(u, self.q)
        return np.where(self.mask, 0.0, g / self.q)

    def E(self, u, eta=None):
        e, _ = energy_and_gradient(self.grid, u, self.p, self.eta if eta is None else eta)
        return e

    def J(self, u):
        return self.E(u, 0.0) ** (1 / self.p) / self.S(u) ** (1 / self.q)

    def F(self, u):
        return math.log(self.E(u)) / self.p - math.log(self.S(u)) / self.q

    def normalize(self, u):
        return u / self.S(u) ** (1 / self.q)

    def residual(self, u):
        """Relative discrete Euler-Lagrange residual on free nodes."""
        E, gE = energy_and_gradient(self.grid, u, self.p, 0.0)
        S = self.S(u)
        rhs = (E / S) * self.source(u)
        r = (gE / self.p - rhs)[self.free]
        return float(np.linalg.norm(r) / np.linalg.norm(rhs[self.free]))

    def preconditioner(self, u):
        if self.p == 2:
            if self._solver2 is None:
                self._solver2 = (TensorSolver(self.grid, self.mask) if self._tensor
                                 else SparseSolver(self.grid, self.mask))
            return self._solver2
        g2, _ = self.grid.grad_sq_at_gauss(u)
        a = (g2 + self.eta) ** (self.p / 2 - 1)
        return SparseSolver(self.grid, self.mask, coef=a)


def _gradF(pb, u):
    E, gE = energy_and_gradient(pb.grid, u, pb.p, pb.eta)
    S, gS = pb.quad.integral_and_gradient(u, pb.q)
    F = math.log(E) / pb.p - math.log(S) / pb.q
    g = gE / (pb.p * E) - gS / (pb.q * S)
    return F, np.where(pb.mask, 0.0, g), E


def minimize(problem: QuotientProblem, u0, opts: FlowOptions = None, callback=None) -> FlowResult:
    opts = opts or FlowOptions()
    if opts.method == "lbfgs":
        return _minimize_lbfgs(problem, u0, opts, callback)
    pb = problem
    p, q = pb.p, pb.q
    u = np.where(pb.mask, 0.0, np.abs(np.asarray(u0, float)))
    u = pb.normalize(u)
    hist = [pb.J(u)]
    P = None
    stall = 0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        E, gE = energy_and_gradient(pb.grid, u, p, pb.eta)
        S = pb.S(u)
        if P is None or p != 2 and (it - 1) % opts.refresh == 0:
            P = pb.preconditioner(u)
        src = pb.source(u)
        if opts.method == "power":
            if p != 2:
                raise ValueError("the plain power iteration is the p = 2 path")
            w = P(src)
            w = np.where(pb.mask, 0.0, np.abs(w))
            u_new = pb.normalize(w)
        else:
            gF = gE / (p * E) - src / S
            gF = np.where(pb.mask, 0.0, gF)
            d = -P(gF)
            d = np.where(pb.mask, 0.0, d)
            F0 = math.log(E) / p - math.log(S) / q
            slope = float(np.sum(gF * d))
            tau = E if p == 2 else E
            u_new = None
            for _ in range(50):
                w = np.abs(u + tau * d)
                F1 = pb.F(w)
                if F1 <= F0 + opts.armijo * tau * slope:
                    u_new = pb.normalize(w)
                    break
                tau *= 0.5
            if u_new is None:
                # no admissible decrease: stationary to working precision
                converged = True
                break
        J_new = pb.J(u_new)
        u = u_new
        hist.append(J_new)
        if callback is not None:
            callback(it, u, J_new)
        rel = (hist[-2] - hist[-1]) / hist[-1]
        if abs(rel) <= opts.tol:
            stall += 1
            if stall >= 3:
                converged = True
                break
        else:
            stall = 0
    res = pb.residual(u)
    if res <= opts.residual_tol:
        converged = True
    if not converged and opts.raise_on_budget:
        raise ConvergenceError(f"no convergence in {opts.max_iter} iterations (residual {res:.3e})")
    E0 = pb.E(u, 0.0)
    return FlowResult(u, pb.J(u), E0, pb.S(u), hist, it, converged, res)


def _minimize_lbfgs(pb, u0, opts, callback):
    """Preconditioned L-BFGS on F; the initial inverse Hessian is E * P^{-1},
    so the first step coincides with the nonlinear inverse power step."""
    u = np.where(pb.mask, 0.0, np.abs(np.asarray(u0, float)))
    u = pb.normalize(u)
    F, g, E = _gradF(pb, u)
    hist = [pb.J(u)]
    pairs = []
    P = pb.preconditioner(u)
    converged = False
    stall = 0
    it = 0
    for it in range(1, opts.max_iter + 1):
        if pb.p != 2 and (it - 1) % opts.refresh == 0:
            P = pb.preconditioner(u)
        # two-loop recursion
        qv = g.copy()
        alphas = []
        for s_, y_, rho_ in reversed(pairs):
            a = rho_ * np.sum(s_ * qv)
            alphas.append(a)
            qv -= a * y_
        if pairs:
            s_, y_, _ = pairs[-1]
            gamma = np.sum(s_ * y_) / np.sum(y_ * P(y_))
        else:
            gamma = E
        r = gamma * P(qv)
        for (s_, y_, rho_), a in zip(pairs, reversed(alphas)):
            b = rho_ * np.sum(y_ * r)
            r += (a - b) * s_
        d = np.where(pb.mask, 0.0, -r)
        slope = float(np.sum(g * d))
        if slope >= 0:
            pairs.clear()
            d = np.where(pb.mask, 0.0, -E * P(g))
            slope = float(np.sum(g * d))
        tau = 1.0
        accepted = False
        for _ in range(40):
            w = u + tau * d
            F1, g1, E1 = _gradF(pb, w)
            if np.isfinite(F1) and F1 <= F + opts.armijo * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            converged = True
            break
        s_vec = w - u
        y_vec = g1 - g
        sy = float(np.sum(s_vec * y_vec))
        if sy > 1e-300:
            pairs.append((s_vec, y_vec, 1.0 / sy))
            if len(pairs) > opts.memory:
                pairs.pop(0)
        scale = pb.S(w) ** (1 / pb.q)
        u = w / scale
        g = g1 * scale
        # rescale stored pairs so they stay consistent with the normalized iterate
        pairs = [(s_ / scale, y_ * scale, rho_) for s_, y_, rho_ in pairs]
        F, E = F1, E1 / scale ** pb.p
        J_new = pb.J(u)
        hist.append(J_new)
        if callback is not None:
            callback(it, u, J_new)
        rel = (hist[-2] - hist[-1]) / hist[-1]
        if rel <= opts.tol:
            stall += 1
            if stall >= 3:
                converged = True
                break
        else:
            stall = 0
    if np.any(u < 0):
        u = np.abs(u)
    res = pb.residual(u)
    if res <= opts.residual_tol:
        converged = True
    if not converged and opts.raise_on_budget:
        raise ConvergenceError(f"no convergence in {opts.max_iter} iterations (residual {res:.3e})")
    return FlowResult(u, pb.J(u), pb.E(u, 0.0), pb.S(u), hist, it, converged, res)
