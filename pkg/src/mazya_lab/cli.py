"""Configuration-driven experiment runner.

    mazya-lab --config run.ini [command] [--out DIR] [--reproducible] [--seed N] [--threads K]

The config is flat ``key = value`` text with one section per subcommand; the
command comes from the positional argument or from ``[run] command``.  Each
run writes ``<command>.json`` (summary, config hash, grid-error estimates,
every table) and ``<command>.csv`` (plus ``<command>_<table>.csv`` extras).

Exit codes: 0 success, 2 invalid configuration, 3 solver non-convergence,
4 diagnostic outcome (concentration, ordering violations, ...).
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import json
import math
import operator
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_DIAGNOSTIC = 0, 2, 3, 4
DEFAULT_OUT = "mazya_out"
ENV_OUT = "MAZYA_LAB_OUT"


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class Diagnostic(RuntimeError):
    pass


# -- typed access to a config section ---------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def number(text: str) -> float:
    """Float literal or arithmetic on literals and ``pi`` (e.g. ``pi/4``, ``2**-7``)."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"not a number: {text!r}")
    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


class Section:
    """Parameter block of one subcommand; unknown keys are rejected."""

    def __init__(self, name, items: dict):
        self.name = name
        self.items = dict(items)
        self.used = set()

    def _raw(self, key, default):
        self.used.add(key)
        if key in self.items:
            return self.items[key]
        if default is None:
            raise ConfigError(f"[{self.name}] missing required key {key!r}")
        return default

    def has(self, key) -> bool:
        self.used.add(key)
        return key in self.items

    def float(self, key, default=None) -> float:
        v = self._raw(key, default)
        return number(v) if isinstance(v, str) else float(v)

    def int(self, key, default=None) -> int:
        v = self.float(key, default)
        if v != int(v):
            raise ConfigError(f"[{self.name}] {key} must be an integer")
        return int(v)

    def str(self, key, default=None) -> str:
        return str(self._raw(key, default)).strip()

    def bool(self, key, default=None) -> bool:
        v = self._raw(key, default)
        if isinstance(v, bool):
            return v
        s = str(v).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} must be a boolean")

    def floats(self, key, default=None) -> list:
        v = self._raw(key, default)
        if isinstance(v, (list, tuple)):
            return [float(x) for x in v]
        return [number(x) for x in str(v).split(",") if x.strip()]

    def ints(self, key, default=None) -> list:
        out = self.floats(key, default)
        if any(x != int(x) for x in out):
            raise ConfigError(f"[{self.name}] {key} must be integers")
        return [int(x) for x in out]

    def check_unused(self):
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise ConfigError(f"[{self.name}] unknown keys: {', '.join(extra)}")


# -- reports ------------------------------------------------------------------------

@dataclass
class Table:
    columns: list
    rows: list


@dataclass
class Report:
    results: dict
    grid_error: dict
    tables: dict = field(default_factory=dict)     # name -> Table; "" is the main table
    status: int = EXIT_OK
    message: str = ""
    files: list = field(default_factory=list)       # extra artifacts written by the command


@dataclass
class Context:
    out: Path
    seed: int
    threads: int
    reproducible: bool

    def map(self, fn, items):
        """Order-preserving map over independent parameter points."""
        items = list(items)
        if self.threads <= 1 or len(items) < 2:
            return [fn(x) for x in items]
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))


def _cell(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    try:
        import numpy as np
        if isinstance(x, np.bool_):
            return "1" if x else "0"
        if isinstance(x, (np.integer,)):
            return str(int(x))
        if isinstance(x, np.floating):
            x = float(x)
    except ImportError:     # pragma: no cover
        pass
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def write_csv(path: Path, table: Table):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_cell(x) for x in row])


def jsonable(x):
    import numpy as np
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, (np.floating, np.integer)):
        return jsonable(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if hasattr(x, "__dataclass_fields__"):
        return jsonable(dict(x.__dict__))
    if hasattr(x, "value") and hasattr(x, "name"):      # enums
        return x.value
    return x


def config_hash(command: str, items: dict, seed: int) -> str:
    blob = json.dumps({"command": command, "params": dict(sorted(items.items())), "seed": seed},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- shared parsing --------------------------------------------------------------------

def _params(sec, m=2, n=3, p=2.0, sigma=0.5):
    from .core.params import ProblemParams
    return ProblemParams(sec.int("m", m), sec.int("n", n), sec.float("p", p),
                         sec.float("sigma", sigma))


def _cap(sec, m, theta0="pi"):
    from .sphere_eig import CapGeometry
    th = sec.float("theta0", theta0)
    return CapGeometry.full(m) if th == math.pi else CapGeometry(m, th)


def _profile(sec, m, n):
    import numpy as np
    from .boundary_asymptotics import BoundaryProfile
    kind = sec.str("profile", "quadratic")
    if kind == "quadratic":
        def mat(key, k):
            v = np.asarray(sec.floats(key, "0"), float)
            if v.size == 1:
                return v[0] * np.eye(k)
            if v.size == k:
                return np.diag(v)
            if v.size == k * k:
                return v.reshape(k, k)
            raise ConfigError(f"{key} needs 1, {k} or {k * k} entries")
        return BoundaryProfile.quadratic(m, n, mat("A", m - 1), mat("B", n - m))
    if kind == "power":
        return BoundaryProfile.power(m, n, c=sec.float("c", 1.0), alpha_y=sec.float("alpha_y", 2.0),
                                     d=sec.float("d", 0.0), gamma=sec.float("gamma", 2.0),
                                     slowly_varying=sec.str("slowly_varying", "constant"))
    if kind == "critical":
        return BoundaryProfile.critical_power(m, n)
    if kind == "zero":
        return BoundaryProfile.zero(m, n)
    raise ConfigError(f"unknown profile kind {kind!r}")


def _halfspace(sec, ctx):
    """Stored solution (``solution = <path prefix>``) or a fresh solve."""
    from .halfspace import HalfspaceSolution, solve_halfspace
    from .core.flow import FlowOptions
    if sec.has("solution"):
        path = Path(sec.str("solution"))
        if not path.with_suffix(".json").exists():
            raise ConfigError(f"no stored solution at {path}")
        return lambda: HalfspaceSolution.load(path)
    m, n, sigma = sec.int("m", 2), sec.int("n", 3), sec.float("sigma", 0.5)
    box, res = sec.float("box", 40.0), sec.int("resolution", 96)
    ratio, it = sec.float("ratio", 1.08), sec.int("max_iter", 400)
    if not 0 < sigma < 1:
        raise ConfigError("need 0 < sigma < 1")

    def solve():
        sol = solve_halfspace(m, n, sigma, box, res, ratio, opts=FlowOptions(max_iter=it))
        sol.save(ctx.out / "halfspace_solution")
        return sol
    return solve


def _check_solution(sol):
    if sol.diagnostic in ("concentration", "spreading"):
        raise Diagnostic(f"half-space solve: {sol.diagnostic}")
    if not sol.converged:
        raise NonConvergence(f"half-space solve stopped at residual {sol.residual:.3e}")


# -- subcommands ----------------------------------------------------------------------
# Each command validates its section and returns a thunk producing a Report.

def cmd_sphere_eig(sec, ctx):
    from .sphere_eig import lambda_p_cap, richardson, sharp_constant_theorem1
    p, m = sec.float("p", 2.0), sec.int("m", 3)
    cap = _cap(sec, m)
    cap.check(p)
    base, levels = sec.int("resolution", 128), sec.int("levels", 3)
    if levels < 3:
        raise ConfigError("Richardson extrapolation needs levels >= 3")
    method = sec.str("method", "auto")

    def run():
        res = ctx.map(lambda k: lambda_p_cap(p, cap, base * 2 ** k, method=method), range(levels))
        lams = [r.lam for r in res]
        val, order = richardson(lams[-3:])
        rows = [[r.resolution, r.lam, r.method, r.iterations] for r in res]
        out = {"lambda": val, "lambda_finest": lams[-1], "observed_order": order,
               "sharp_constant": sharp_constant_theorem1(res[-1]), "p": p, "m": m,
               "theta0": cap.theta0, "full_sphere": cap.is_full_sphere}
        return Report(out, {"lambda": abs(lams[-1] - val)},
                      {"": Table(["resolution", "lambda", "method", "iterations"], rows)})
    return run


def cmd_check_young(sec, ctx):
    import numpy as np
    from .picone import EQUALITY_GAP, EQUALITY_RTOL, relative_young_gap, young_samples
    n = sec.int("samples", 100_000)
    bins = sec.int("p_bins", 10)
    if n < 1 or bins < 1:
        raise ConfigError("samples and p_bins must be positive")

    def run():
        r, t, p = young_samples(n, np.random.default_rng(ctx.seed))
        gap = relative_young_gap(r, t, p)
        equal = np.abs(r - t) <= EQUALITY_RTOL * np.maximum(r, t)
        wrong = (np.abs(gap) < EQUALITY_GAP) != equal
        edges = np.linspace(p.min(), p.max(), bins + 1)
        idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, bins - 1)
        rows = []
        for k in range(bins):
            s = idx == k
            rows.append([edges[k], edges[k + 1], int(s.sum()),
                         float(gap[s].min()) if s.any() else float("nan"),
                         int(equal[s].sum()), int(wrong[s].sum())])
        viol = int(np.sum(gap < -1e-12))
        out = {"samples": n, "min_gap": float(gap.min()), "violations": viol,
               "misclassified": int(wrong.sum()), "equal_pairs": int(equal.sum())}
        rep = Report(out, {"min_gap": 0.0},
                     {"": Table(["p_lo", "p_hi", "samples", "min_gap", "equal_pairs",
                                 "misclassified"], rows)})
        if viol or wrong.any():
            rep.status, rep.message = EXIT_DIAGNOSTIC, "Young inequality check failed"
        return rep
    return run


def cmd_check_picone(sec, ctx):
    from .picone import picone_sweep
    m, n, p = sec.int("m", 3), sec.int("n", 4), sec.float("p", 2.0)
    cap = _cap(sec, m, "pi/3")
    cap.check(p)
    cells = sec.ints("cells", "32,64")
    bumps = sec.int("bumps", 100)
    if not n > m:
        raise ConfigError("the wedge test grid needs n > m")

    def run():
        sw = picone_sweep(m, n, p, cap, cells, bumps, ctx.seed)
        rows = [[c, k, ch.lhs, ch.identity, ch.mid, ch.rhs, ch.tol, ch.ordered()]
                for c, level in zip(sw.cells, sw.chains) for k, ch in enumerate(level)]
        out = {"lambda": sw.lam, "cells": sw.cells, "max_tol": sw.max_tol,
               "violations": sw.violations, "tolerance_shrink": sw.shrink}
        rep = Report(out, {"chain_tolerance": sw.max_tol[-1]},
                     {"": Table(["cells", "bump", "lhs", "identity", "mid", "rhs", "tol",
                                 "ordered"], rows)})
        if any(sw.violations):
            rep.status, rep.message = EXIT_DIAGNOSTIC, "Picone chain ordering violated"
        return rep
    return run


def cmd_udelta_sweep(sec, ctx):
    import numpy as np
    from .core.params import ProblemParams
    from .picone import TestFamilySpec, udelta_quotient
    from .sphere_eig import lambda_p_cap
    m, n, p = sec.int("m", 2), sec.int("n", 3), sec.float("p", 2.0)
    cap = _cap(sec, m, "pi/2")
    cap.check(p)
    deltas = sec.floats("deltas", "0.2,0.1,0.05")
    R, res = sec.float("R", 1.0), sec.int("resolution", 256)
    specs = [TestFamilySpec(d, R, cap, ProblemParams(m, n, p, 0.0), res) for d in deltas]

    def run():
        prof = lambda_p_cap(p, cap, res)
        rows = ctx.map(lambda s: udelta_quotient(s, prof), specs)
        gaps = np.array([r.gap for r in rows])
        slope = (float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
                 if np.all(gaps > 0) else float("nan"))
        out = {"lambda": prof.lam, "slope": slope, "gaps_positive": bool(np.all(gaps > 0))}
        tab = Table(["delta", "quotient", "lambda", "gap", "refinement_error"],
                    [[d, r.quotient, r.lam, r.gap, r.refinement_error] for d, r in zip(deltas, rows)])
        return Report(out, {"quotient": max(r.refinement_error for r in rows)}, {"": tab})
    return run


def _wedge_domain(sec, params, extra_theta=None):
    from .wedge_extremal import WedgeDomain
    cap = _cap(sec, params.m, "pi/4")
    radial = sec.bool("radial", False)
    return WedgeDomain.build(params.m, params.n, cap, sec.float("Ry", 20.0), sec.float("Rz", 20.0),
                             sec.int("n_rho", 32), sec.int("n_theta", 8), sec.int("n_t", 32),
                             sec.float("ratio", 1.1), theta_max=extra_theta, radial=radial)


def _solver(sec, ctx, n_starts=5):
    from .wedge_extremal import SolverOptions
    return SolverOptions(max_iter=sec.int("max_iter", 300), n_starts=sec.int("n_starts", n_starts),
                         seed=ctx.seed, method=sec.str("method", "lbfgs"),
                         sigma0_diagnostic=sec.bool("sigma0_diagnostic", False))


def cmd_wedge_extremal(sec, ctx):
    from .wedge_extremal import _check_params, coarsened, minimize_quotient
    params = _params(sec)
    dom = _wedge_domain(sec, params)
    opts = _solver(sec, ctx)
    _check_params(params, dom, opts)
    grid_err = sec.bool("grid_error", True)

    def run():
        sol = minimize_quotient(params, dom, opts)
        err = float("nan")
        if grid_err:
            err = abs(minimize_quotient(params, coarsened(dom), opts).mu - sol.mu)
        out = {"mu": sol.mu, "el_residual": sol.el_residual, "iterations": sol.iterations,
               "converged": sol.converged, "diagnostic": sol.diagnostic, "basins": sol.basins,
               "mass_fractions": sol.mass_fractions, "q": sol.q}
        g = sol.profile.grid
        cols = list(g.names)
        mesh = [g.mesh(nm).ravel() for nm in cols]
        vals = sol.profile.values.ravel()
        prof = Table(cols + ["u"], [[*(c[i] for c in mesh), vals[i]] for i in range(vals.size)])
        tab = Table(["basin", "mu"], [[k, mu] for k, mu in enumerate(sol.basins)])
        rep = Report(out, {"mu": err}, {"": tab, "profile": prof})
        if sol.diagnostic in ("concentration", "spreading"):
            rep.status, rep.message = EXIT_DIAGNOSTIC, sol.diagnostic
        elif not sol.converged:
            rep.status, rep.message = EXIT_NONCONVERGED, "iteration budget exhausted"
        return rep
    return run


def _region(sec, prefix):
    from .wedge_extremal import Region
    return Region(tuple(sec.floats(f"{prefix}_rho")), tuple(sec.floats(f"{prefix}_theta")),
                  tuple(sec.floats(f"{prefix}_t")))


def cmd_perturbed_compare(sec, ctx):
    from .wedge_extremal import _check_params, perturbed_compare
    params = _params(sec)
    bump = _region(sec, "bump")
    dom = _wedge_domain(sec, params, extra_theta=max(bump.theta[1], sec.float("theta_max", 0.0)))
    opts = _solver(sec, ctx, n_starts=1)
    _check_params(params, dom, opts)

    def run():
        r = perturbed_compare(params, dom, bump, opts)
        out = dict(r.__dict__)
        out["gap_over_error"] = r.gap / r.grid_error if r.grid_error > 0 else float("inf")
        tab = Table(["mu_base", "mu_perturbed", "gap", "grid_error", "coarse_gap", "components"],
                    [[r.mu_base, r.mu_perturbed, r.gap, r.grid_error, r.coarse_gap, r.components]])
        return Report(out, {"gap": r.grid_error}, {"": tab})
    return run


def cmd_symmetry_bound(sec, ctx):
    from .symmetry import SymmetryBreakingQuery, second_variation_bound
    m, n, p = sec.int("m", 2), sec.int("n", 3), sec.float("p", 4.0)
    sigma = sec.float("sigma", 0.5)
    sigmas = sec.floats("sigmas", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7")
    q = SymmetryBreakingQuery.of(m, n, p, sigma)
    for s in sigmas:
        second_variation_bound(m, n, p, s)

    def run():
        rows = [[s, second_variation_bound(m, n, p, s)] for s in sigmas]
        return Report(dict(q.__dict__), {"bound": 0.0}, {"": Table(["sigma", "bound"], rows)})
    return run


def cmd_sigma_hat(sec, ctx):
    from .symmetry import p_hat, sigma_hat
    m, n, p = sec.int("m", 2), sec.int("n", 3), sec.float("p", 4.0)
    if not p > m:
        raise ConfigError("sigma_hat needs p > m")
    if not 2 <= m <= n - 1:
        raise ConfigError("need 2 <= m <= n-1")

    def run():
        s = sigma_hat(m, n, p)
        ph = p_hat(m, n)
        out = {"sigma_hat": s.value, "bisection": s.bisection, "agreement": abs(s.value - s.bisection),
               "admissible": s.admissible, "upper": s.upper, "p_hat": ph}
        tab = Table(["m", "n", "p", "sigma_hat", "bisection", "p_hat"],
                    [[m, n, p, s.value, s.bisection, ph]])
        return Report(out, {"sigma_hat": abs(s.value - s.bisection)}, {"": tab})
    return run


def cmd_second_variation(sec, ctx):
    from .symmetry import radial_profile, second_variation_numeric
    from .wedge_extremal import SolverOptions
    params = _params(sec, p=4.0, sigma=0.6)
    if not params.p > params.m:
        raise ConfigError("the second-variation bound needs p > m")
    Ry, Rz = sec.float("Ry", 20.0), sec.float("Rz", 20.0)
    nr, nt, ratio = sec.int("n_rho", 64), sec.int("n_t", 64), sec.float("ratio", 1.08)
    nth = sec.int("n_theta", 16)
    it = sec.int("max_iter", 400)

    def run():
        sol, _ = radial_profile(params, Ry, Rz, nr, nt, ratio, SolverOptions(n_starts=1, max_iter=it,
                                                                               seed=ctx.seed))
        sv = second_variation_numeric(sol.profile, params, nth)
        sv2 = second_variation_numeric(sol.profile, params, 2 * nth)
        out = {"d2J": sv.d2J, "J": sv.J, "bound": sv.bound, "J_times_bound": sv.J * sv.bound,
               "sharp_bound": sv.sharp_bound, "cross": sv.cross, "negative": sv.d2J < 0,
               "below_J_times_bound": sv.d2J <= sv.J * sv.bound,
               "radial_converged": sol.converged, "radial_diagnostic": sol.diagnostic}
        tab = Table(["term", "value"], [[k, v] for k, v in sorted(sv.hessian_terms.items())])
        rep = Report(out, {"d2J": abs(sv2.d2J - sv.d2J), "J": sol.el_residual}, {"": tab})
        if sol.diagnostic in ("concentration", "spreading"):
            rep.status, rep.message = EXIT_DIAGNOSTIC, sol.diagnostic
        elif not sol.converged:
            rep.status, rep.message = EXIT_NONCONVERGED, "radial solve did not converge"
        return rep
    return run


def cmd_rearrange_check(sec, ctx):
    import numpy as np
    from .symmetry import rearrangement_check, smooth_corpus
    from .wedge_extremal import WedgeDomain
    params = _params(sec)
    cap = _cap(sec, params.m, "pi/2")
    dom = WedgeDomain.build(params.m, params.n, cap, sec.float("Ry", 6.0), sec.float("Rz", 6.0),
                            sec.int("n_rho", 32), sec.int("n_theta", 8), sec.int("n_t", 32),
                            sec.float("ratio", 1.0))
    count = sec.int("functions", 20)

    def run():
        rng = np.random.default_rng(ctx.seed)
        corpus = smooth_corpus(dom.grid, dom.mask(), rng, count)
        checks = [rearrangement_check(v, params) for v in corpus]
        keys = sorted(checks[0].norm_errors)
        rows = [[k, *(c.norm_errors[x] for x in keys), c.idempotency, c.energy_ratio, c.exact]
                for k, c in enumerate(checks)]
        out = {"max_norm_error": max(max(c.norm_errors.values()) for c in checks),
               "max_idempotency": max(c.idempotency for c in checks),
               "max_energy_ratio": max(c.energy_ratio for c in checks),
               "exact": all(c.exact for c in checks)}
        tab = Table(["function", *(f"norm_{x}" for x in keys), "idempotency", "energy_ratio",
                     "exact"], rows)
        return Report(out, {"energy_ratio": max(0.0, out["max_energy_ratio"])}, {"": tab})
    return run


def cmd_halfspace_solve(sec, ctx):
    from .halfspace import solve_halfspace
    from .core.flow import FlowOptions
    from .core.params import ProblemParams
    m, n, sigma = sec.int("m", 2), sec.int("n", 3), sec.float("sigma", 0.5)
    box, res = sec.float("box", 40.0), sec.int("resolution", 96)
    ratio, it = sec.float("ratio", 1.08), sec.int("max_iter", 400)
    coarse = sec.int("coarse_resolution", res // 2)
    ProblemParams(m, n, 2.0, sigma)
    if not 0 < sigma < 1:
        raise ConfigError("need 0 < sigma < 1")

    def run():
        sol = solve_halfspace(m, n, sigma, box, res, ratio, opts=FlowOptions(max_iter=it))
        files = list(sol.save(ctx.out / "halfspace_solution"))
        err = float("nan")
        if coarse > 0:
            c = solve_halfspace(m, n, sigma, box, coarse, ratio ** 2, opts=FlowOptions(max_iter=it),
                                cross_check=False)
            err = abs(c.mu_q - sol.mu_q)
        out = {k: v for k, v in sol.header().items() if k != "grid"}
        tab = Table(["iteration", "J"], [[k, float(h)] for k, h in enumerate(sol.history)])
        rep = Report(out, {"mu_q": err, "residual": sol.residual, "power_step": sol.cross_check},
                     {"": tab}, files=files)
        _status_from(rep, sol)
        return rep
    return run


def _status_from(rep, sol):
    try:
        _check_solution(sol)
    except Diagnostic as exc:
        rep.status, rep.message = EXIT_DIAGNOSTIC, str(exc)
    except NonConvergence as exc:
        rep.status, rep.message = EXIT_NONCONVERGED, str(exc)


def cmd_halfspace_asymptotics(sec, ctx):
    from .halfspace import fit_asymptotics, mass_radius
    get = _halfspace(sec, ctx)

    def run():
        sol = get()
        _check_solution(sol)
        fit = fit_asymptotics(sol)
        out = dict(fit.__dict__)
        out.update({"mu_q": sol.mu_q, "mass_radius": mass_radius(sol),
                    "expected_far_exponent": -(sol.n - 1)})
        tab = Table(["annulus", "M"], [[k, v] for k, v in enumerate(fit.M_annuli)])
        return Report(out, {"M_spread": fit.M_spread, "residual": sol.residual}, {"": tab})
    return run


def cmd_kelvin_check(sec, ctx):
    from .halfspace import kelvin_check
    get = _halfspace(sec, ctx)
    window = tuple(sec.floats("window", "0.5,2.0"))
    if len(window) != 2 or not 0 < window[0] < window[1]:
        raise ConfigError("window needs two increasing positive radii")

    def run():
        sol = get()
        _check_solution(sol)
        k = kelvin_check(sol, window)
        out = dict(k.__dict__)
        tab = Table(list(out), [list(out.values())])
        return Report(out, {"residual_phi": k.residual_phi, "roundtrip": k.roundtrip_error},
                      {"": tab})
    return run


def cmd_profile_averages(sec, ctx):
    import numpy as np
    from .boundary_asymptotics import profile_averages
    m, n = sec.int("m", 2), sec.int("n", 4)
    F = _profile(sec, m, n)
    rho = sec.floats("rho", "1")
    betas = np.linspace(0.0, math.pi / 2, sec.int("n_beta", 17))

    def run():
        pa = profile_averages(F, rho, betas)
        tab = Table(["rho", "f", "f2"], [[r, a, b] for r, a, b in zip(pa.rho, pa.f, pa.f2)])
        phi = Table(["beta", "Phi", "Phi_error"],
                    [[b, v, e] for b, v, e in zip(pa.beta, pa.Phi, pa.Phi_error)])
        f1 = Table(["rho", "beta", "f1"], [[r, b, pa.f1[i, j]] for i, r in enumerate(pa.rho)
                                           for j, b in enumerate(pa.beta)])
        out = {"profile": F.describe(), "f": pa.f, "f2": pa.f2, "Phi_converged": pa.Phi_converged}
        return Report(out, {"Phi": float(np.nanmax(pa.Phi_error))},
                      {"": tab, "Phi": phi, "f1": f1})
    return run


def cmd_hypothesis_report(sec, ctx):
    from .boundary_asymptotics import hypothesis_report
    m, n = sec.int("m", 2), sec.int("n", 3)
    F = _profile(sec, m, n)
    lo, hi = sec.float("rho_lo", 1e-3), sec.float("rho_hi", 0.25)
    if not 0 < lo < hi:
        raise ConfigError("need 0 < rho_lo < rho_hi")
    nr, delta = sec.int("n_rho", 13), sec.float("delta", 0.25)

    def run():
        h = hypothesis_report(F, (lo, hi), nr, delta=delta)
        tab = Table(["rho", "f", "eq4_ratio"], [list(x) for x in zip(h.rho, h.f, h.eq4_values)])
        return Report(h.as_dict(), {"Phi_converged": h.Phi_converged}, {"": tab})
    return run


def cmd_attainability(sec, ctx):
    from .boundary_asymptotics import attainability
    get = _halfspace(sec, ctx)
    m, n = sec.int("m", 2), sec.int("n", 3)
    F = _profile(sec, m, n)
    eps = sec.floats("eps", "2**-3,2**-4,2**-5,2**-6,2**-7")
    delta = sec.float("delta", 0.25)
    direct = sec.bool("direct", True)
    if any(not 0 < e < delta for e in eps):
        raise ConfigError("need 0 < eps < delta")

    def run():
        sol = get()
        _check_solution(sol)
        rep = attainability(sol, F, eps, delta, direct=direct)
        cols = list(rep.COLUMNS)
        rows = [list(r) for r in rep.rows()]
        if direct:
            cols += ["direct", "direct_flat"]
            rows = [r + [d, d0] for r, d, d0 in zip(rows, rep.direct, rep.direct_flat)]
        out = {"regime": rep.regime, "mu_sq": rep.mu_sq, "variation1": rep.variation1,
               "variation2": rep.variation2, "expansion_gap": rep.expansion_gap(),
               "deviation_gap": rep.deviation_gap(), "below_mu_sq": rep.quotient[-1] < rep.mu_sq,
               "theorem": rep.hypotheses.get("theorem"), "profile": rep.profile,
               "M": rep.extras["M"], "A2_parts": rep.extras["A2_parts"]}
        return Report(out, {"quotient": rep.expansion_gap(), "halfspace_residual": sol.residual},
                      {"": Table(cols, rows)})
    return run


def cmd_rvf_check(sec, ctx):
    from .boundary_asymptotics import rvf_ratio_check
    m, n = sec.int("m", 2), sec.int("n", 3)
    F = _profile(sec, m, n)
    t = sec.float("t", 2.0)
    eps = sec.floats("eps", "2**-4,2**-6,2**-8,2**-10,2**-12")
    if t <= 0 or t == 1:
        raise ConfigError("need t > 0, t != 1")

    def run():
        r = rvf_ratio_check(F, t, eps)
        tab = Table(["eps", "ratio", "order"], [list(x) for x in zip(r.eps, r.ratios, r.orders)])
        out = {"declared_alpha": F.alpha, "fitted_alpha": r.fitted_alpha, "t": t,
               "orders": r.orders}
        return Report(out, {"order": abs(float(r.orders[-1]) - F.alpha)}, {"": tab})
    return run


COMMANDS = {
    "sphere-eig": cmd_sphere_eig,
    "check-young": cmd_check_young,
    "check-picone": cmd_check_picone,
    "udelta-sweep": cmd_udelta_sweep,
    "wedge-extremal": cmd_wedge_extremal,
    "perturbed-compare": cmd_perturbed_compare,
    "symmetry-bound": cmd_symmetry_bound,
    "sigma-hat": cmd_sigma_hat,
    "second-variation": cmd_second_variation,
    "rearrange-check": cmd_rearrange_check,
    "halfspace-solve": cmd_halfspace_solve,
    "halfspace-asymptotics": cmd_halfspace_asymptotics,
    "kelvin-check": cmd_kelvin_check,
    "profile-averages": cmd_profile_averages,
    "hypothesis-report": cmd_hypothesis_report,
    "attainability": cmd_attainability,
    "rvf-check": cmd_rvf_check,
}


# -- driver ---------------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="mazya-lab", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", nargs="?", help="subcommand (default: [run] command)")
    ap.add_argument("--config", help="flat key = value config with one section per subcommand")
    ap.add_argument("--out", help="output directory (overridden by $%s)" % ENV_OUT)
    ap.add_argument("--reproducible", action="store_true",
                    help="single thread, fixed seed, no timings in the outputs")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--list", action="store_true", help="list subcommands and exit")
    return ap


def _load_config(path):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return cp


def _limit_threads(k):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.list:
        print("\n".join(COMMANDS))
        return EXIT_OK
    try:
        cp = _load_config(args.config)
        runsec = dict(cp["run"]) if cp.has_section("run") else {}
        command = args.command or runsec.get("command")
        if not command:
            raise ConfigError("no command given (positional or [run] command)")
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        unknown = set(runsec) - {"command", "out", "seed", "threads", "reproducible"}
        if unknown:
            raise ConfigError(f"[run] unknown keys: {', '.join(sorted(unknown))}")
        reproducible = args.reproducible or Section("run", runsec).bool("reproducible", False)
        seed = args.seed if args.seed is not None else int(runsec.get("seed", 0))
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        threads = 1 if reproducible else (args.threads or int(runsec.get("threads", 1)))
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        out = Path(os.environ.get(ENV_OUT) or args.out or runsec.get("out") or DEFAULT_OUT)
        _limit_threads(threads)
        items = dict(cp[command]) if cp.has_section(command) else {}
        sec = Section(command, items)
        ctx = Context(out, seed, threads, reproducible)
        thunk = COMMANDS[command](sec, ctx)
        sec.check_unused()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out.mkdir(parents=True, exist_ok=True)
    from .sphere_eig import ConvergenceError as EigError
    from .core.flow import ConvergenceError as FlowError
    from .wedge_extremal import DiagnosticOutcome
    t0 = time.perf_counter()
    try:
        rep = thunk()
    except (EigError, FlowError, NonConvergence) as exc:
        rep = Report({}, {}, status=EXIT_NONCONVERGED, message=str(exc))
    except (DiagnosticOutcome, Diagnostic) as exc:
        rep = Report({}, {}, status=EXIT_DIAGNOSTIC, message=str(exc))
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    elapsed = time.perf_counter() - t0

    files = list(rep.files)
    tables = {}
    for name, tab in rep.tables.items():
        path = out / (f"{command}.csv" if not name else f"{command}_{name}.csv")
        write_csv(path, tab)
        files.append(path)
        tables[name or "main"] = {"file": path.name, "columns": tab.columns, "rows": tab.rows}
    summary = {"command": command, "config_hash": config_hash(command, items, seed),
               "config": items, "seed": seed, "reproducible": reproducible,
               "exit_code": rep.status, "message": rep.message, "results": rep.results,
               "grid_error": rep.grid_error, "tables": tables,
               "files": sorted(Path(f).name for f in files)}
    if not reproducible:
        summary["runtime_s"] = elapsed
        summary["threads"] = threads
    js = out / f"{command}.json"
    js.write_text(json.dumps(jsonable(summary), indent=1, sort_keys=True))
    msg = f"{command}: exit {rep.status}" + (f" ({rep.message})" if rep.message else "")
    print(msg + f" -> {js}")
    return rep.status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
