"""Weighted norms, p-energies and the quotient J on grid functions."""

from __future__ import annotations

import math

import numpy as np

from .grid import GridFunction
from .params import ProblemParams


def fsum(a) -> float:
    """Fixed-order compensated sum (deterministic regardless of threading)."""
    return math.fsum(np.ravel(a).tolist())


def norm_weights(grid, mask, sigma: float, s: float) -> np.ndarray:
    """Lumped weights of |y|^{(sigma-1) s}; zero on masked nodes.

    Raises if an unmasked node carries an infinite weight."""
    with np.errstate(divide="ignore", invalid="ignore"):
        w = grid.lumped_weights((sigma - 1.0) * s)
    w = np.where(mask, 0.0, w)
    if not np.all(np.isfinite(w)):
        raise ValueError("weight integral diverges on a free node next to |y| = 0; "
                         "mask that node or use a different s/sigma")
    return w


def quad_points_for(s: float) -> int:
    """Gauss points per axis for |u|^s integrands."""
    return int(min(4, max(2, np.ceil((s + 1) / 2))))


def weighted_norm(v: GridFunction, params: ProblemParams, s: float, ng: int = None) -> float:
    """( int |y|^{(sigma-1)s} |v|^s dx )^{1/s} with the singular-adapted Gauss rule."""
    if s < 1:
        raise ValueError("need s >= 1")
    quad = v.grid.quadrature(ng or quad_points_for(s), (params.sigma - 1.0) * s)
    quad.check_support(v.values)
    return fsum(quad.weights * np.abs(quad.at(v.values)) ** s) ** (1.0 / s)


def energy_density(grid, u, p, eta=0.0):
    """Gauss-point |grad u|^2 and the weighted p-energy density."""
    g2, gs = grid.grad_sq_at_gauss(u)
    dens = grid.gauss_weights * (g2 + eta) ** (p / 2.0)
    return g2, gs, dens


def dirichlet_energy(v: GridFunction, p: float) -> float:
    _, _, dens = energy_density(v.grid, v.values, p)
    return fsum(dens)


def energy_and_gradient(grid, u, p, eta=0.0):
    """E(u) = sum_g w_g (|grad u|^2 + eta)^{p/2} and dE/du (nodal array)."""
    g2, gs, dens = energy_density(grid, u, p, eta)
    a = p * grid.gauss_weights * (g2 + eta) ** (p / 2.0 - 1.0)
    grad = grid.grad_at_gauss_T([a * c * g for c, g in zip(grid.metric, gs)])
    return float(np.sum(dens)), grad


def rayleigh_quotient(v: GridFunction, params: ProblemParams) -> float:
    den = weighted_norm(v, params, params.q)
    if den == 0.0:
        raise ZeroDivisionError("weighted norm vanishes")
    return dirichlet_energy(v, params.p) ** (1.0 / params.p) / den
