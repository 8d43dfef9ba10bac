"""Axisymmetric tensor grids and grid functions.

A grid is a tensor product of 1-D axes in reduced coordinates.  Recognised
axis names and their weights:

    rho    |y|          rho^{m-1}
    theta  polar angle  sin^{m-2}(theta), metric factor 1/rho^2
    t      |z|          t^{n-m-1}
    r      |y'|         r^{m-2}
    y1     y_1          1

Functions are continuous piecewise multilinear (Q1).  Energies are evaluated
with tensor Gauss rules inside cells, so no integrand is ever sampled on a
singular axis.  Nodal (lumped) weights integrate the weight exactly over dual
cells.  An axis may be "mirrored": its first node sits off the axis and a
ghost cell [0, x0] carries the constant extension, which is the natural
symmetric extension across t = 0 or r = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .params import sphere_area

AXIS_NAMES = ("rho", "theta", "t", "r", "y1")
RADIAL_NAMES = ("rho", "t", "r", "y1")


def axis_exponent(name: str, m: int, n: int) -> float:
    return {"rho": m - 1, "theta": m - 2, "t": n - m - 1, "r": m - 2, "y1": 0}[name]


def _power_integral(a, b, e):
    """int_a^b x^e dx for 0 <= a <= b, elementwise; inf when divergent."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    out = np.empty(np.broadcast(a, b).shape)
    if e == -1.0:
        with np.errstate(divide="ignore"):
            out[...] = np.log(b) - np.log(a)
    else:
        with np.errstate(divide="ignore"):
            fb = b ** (e + 1.0)
            fa = a ** (e + 1.0)
        out[...] = (fb - fa) / (e + 1.0)
    if e <= -1.0:
        out = np.where(a == 0.0, np.inf, out)
    return np.where(b == a, 0.0, out)


def _sine_integral(a, b, k):
    """int_a^b sin^k x dx; closed form for k <= 2, 4-point Gauss otherwise."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if k == 0:
        return b - a
    if k == 1:
        return np.cos(a) - np.cos(b)
    if k == 2:
        return (b - a) / 2.0 - (np.sin(2 * b) - np.sin(2 * a)) / 4.0
    xg, wg = np.polynomial.legendre.leggauss(4)
    mid, half = (a + b) / 2.0, (b - a) / 2.0
    pts = mid[..., None] + half[..., None] * xg
    return half * np.sum(wg * np.sin(pts) ** k, axis=-1)


@dataclass(frozen=True, eq=False)
class Axis:
    name: str
    nodes: np.ndarray
    exponent: float
    mirror: bool = False

    def __post_init__(self):
        if self.name not in AXIS_NAMES:
            raise ValueError(f"unknown axis {self.name!r}")
        x = np.array(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("an axis needs at least two nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError(f"nodes of axis {self.name} must be strictly increasing")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite node")
        if self.name in RADIAL_NAMES and x[0] < 0:
            raise ValueError(f"axis {self.name} must be nonnegative")
        if self.name == "theta" and (x[0] < 0 or x[-1] > np.pi + 1e-14):
            raise ValueError("theta must lie in [0, pi]")
        if self.mirror and x[0] <= 0:
            raise ValueError("a mirrored axis needs its first node off the axis")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def size(self) -> int:
        return self.nodes.size

    def weight(self, x):
        if self.name == "theta":
            return np.sin(x) ** self.exponent
        return np.asarray(x, float) ** self.exponent

    def weight_integral(self, a, b, extra: float = 0.0):
        """int_a^b w(x) x^extra dx (extra only for non-angular axes)."""
        if self.name == "theta":
            if extra != 0.0:
                raise ValueError("extra power is not defined on the angular axis")
            k = self.exponent
            if k == int(k) and k <= 2:
                return _sine_integral(a, b, int(k))
            return _sine_integral(a, b, k)
        return _power_integral(a, b, self.exponent + extra)

    @cached_property
    def cell_bounds(self):
        x = self.nodes
        lo, hi = x[:-1], x[1:]
        n0, n1 = np.arange(x.size - 1), np.arange(1, x.size)
        if self.mirror:
            lo = np.concatenate([[0.0], lo])
            hi = np.concatenate([[x[0]], hi])
            n0 = np.concatenate([[0], n0])
            n1 = np.concatenate([[0], n1])
        return lo, hi, np.stack([n0, n1], axis=1)

    @cached_property
    def dual_edges(self):
        x = self.nodes
        start = 0.0 if self.mirror else x[0]
        return np.concatenate([[start], 0.5 * (x[:-1] + x[1:]), [x[-1]]])

    def lumped(self, extra: float = 0.0):
        e = self.dual_edges
        return self.weight_integral(e[:-1], e[1:], extra)

    def cell_measures(self):
        lo, hi, _ = self.cell_bounds
        return self.weight_integral(lo, hi)

    def gauss(self, ng: int):
        """Per-cell Gauss data: points, weighted quadrature weights, local
        shape values and derivatives, node pairs."""
        lo, hi, cn = self.cell_bounds
        xr, wr = np.polynomial.legendre.leggauss(ng)
        h = hi - lo
        xg = lo[:, None] + 0.5 * (xr[None, :] + 1.0) * h[:, None]
        wq = 0.5 * h[:, None] * wr[None, :] * self.weight(xg)
        s = 0.5 * (xr + 1.0)
        val = np.empty((h.size, ng, 2))
        der = np.empty((h.size, ng, 2))
        val[:, :, 0] = 1.0 - s
        val[:, :, 1] = s
        der[:, :, 0] = -1.0 / h[:, None]
        der[:, :, 1] = 1.0 / h[:, None]
        if self.mirror:
            val[0] = 0.5
            der[0] = 0.0
        return xg, wq, val, der, cn


def graded_nodes(length: float, ncells: int, ratio: float = 1.05,
                 start: float = 0.0, mirror: bool = False) -> np.ndarray:
    """Geometrically graded nodes on [start, start+length], finest at start.

    With mirror=True the first node sits at half the first spacing and the
    node count equals ncells (the ghost cell is implicit)."""
    if ncells < 1:
        raise ValueError("ncells must be >= 1")
    k = np.arange(ncells)
    h = ratio ** k
    if mirror:
        h = h.copy()
        h[0] *= 0.5
    h *= length / h.sum()
    x = start + np.concatenate([[0.0], np.cumsum(h)])
    if mirror:
        x = x[1:]
    x[-1] = start + length
    return x


class AxiGrid:
    """Tensor grid of reduced coordinates with dimension-weighted measures."""

    def __init__(self, axes, m: int, n: int, ngauss: int = 2):
        axes = tuple(axes)
        names = [a.name for a in axes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate axis")
        if "theta" in names and "rho" not in names:
            raise ValueError("an angular axis needs a rho axis")
        if ("rho" in names) and (("r" in names) or ("y1" in names)):
            raise ValueError("mixing polar and cartesian y coordinates")
        for a in axes:
            want = axis_exponent(a.name, m, n)
            if a.exponent != want:
                raise ValueError(f"axis {a.name} needs weight exponent {want}, got {a.exponent}")
        self.axes = axes
        self.m, self.n = int(m), int(n)
        self.ngauss = int(ngauss)
        self.names = tuple(names)
        self.shape = tuple(a.size for a in axes)
        self.ndim = len(axes)
        fac = 1.0
        if "theta" in names or "r" in names:
            fac *= sphere_area(m - 2)
        elif "rho" in names:
            fac *= sphere_area(m - 1)
        if "t" in names:
            fac *= sphere_area(n - m - 1)
        self.angular_factor = fac

    # -- construction helpers -------------------------------------------------
    @classmethod
    def build(cls, m, n, spec, ngauss=2):
        """spec: sequence of (name, nodes) or (name, nodes, mirror)."""
        axes = []
        for item in spec:
            name, nodes = item[0], item[1]
            mirror = bool(item[2]) if len(item) > 2 else False
            axes.append(Axis(name, nodes, axis_exponent(name, m, n), mirror))
        return cls(axes, m, n, ngauss)

    def axis(self, name) -> Axis:
        return self.axes[self.names.index(name)]

    def index(self, name) -> int:
        return self.names.index(name)

    def with_axes(self, **replace) -> "AxiGrid":
        axes = [replace.get(a.name, a) for a in self.axes]
        return AxiGrid(axes, self.m, self.n, self.ngauss)

    def dilated(self, lam: float) -> "AxiGrid":
        axes = [Axis(a.name, a.nodes * lam, a.exponent, a.mirror) if a.name in RADIAL_NAMES else a
                for a in self.axes]
        return AxiGrid(axes, self.m, self.n, self.ngauss)

    def spec(self) -> dict:
        return {"m": self.m, "n": self.n, "ngauss": self.ngauss,
                "axes": [{"name": a.name, "mirror": a.mirror, "nodes": a.nodes.tolist()}
                         for a in self.axes]}

    @classmethod
    def from_spec(cls, d) -> "AxiGrid":
        return cls.build(d["m"], d["n"], [(a["name"], a["nodes"], a["mirror"]) for a in d["axes"]],
                         d.get("ngauss", 2))

    # -- coordinates ----------------------------------------------------------
    def node_coords(self, name) -> np.ndarray:
        """Nodal coordinate array broadcastable to the grid shape."""
        i = self.index(name)
        shp = [1] * self.ndim
        shp[i] = -1
        return self.axes[i].nodes.reshape(shp)

    def mesh(self, name) -> np.ndarray:
        return np.broadcast_to(self.node_coords(name), self.shape)

    def y_norm_nodes(self) -> np.ndarray:
        if "rho" in self.names:
            return np.broadcast_to(self.node_coords("rho"), self.shape)
        y1 = self.node_coords("y1") if "y1" in self.names else 0.0
        r = self.node_coords("r") if "r" in self.names else 0.0
        return np.broadcast_to(np.sqrt(y1 ** 2 + r ** 2), self.shape)

    def cell_measures(self) -> np.ndarray:
        out = np.array(self.angular_factor)
        for a in self.axes:
            out = np.multiply.outer(out, a.cell_measures())
        return out

    # -- Gauss machinery ------------------------------------------------------
    @cached_property
    def _gauss(self):
        data = []
        for a in self.axes:
            xg, wq, val, der, cn = a.gauss(self.ngauss)
            nc, ng = xg.shape
            rows = np.repeat(np.arange(nc * ng), 2)
            cols = np.repeat(cn, ng, axis=0).reshape(nc, ng, 2).reshape(-1)
            B = sp.csr_matrix((val.reshape(-1), (rows, cols)), shape=(nc * ng, a.size))
            D = sp.csr_matrix((der.reshape(-1), (rows, cols)), shape=(nc * ng, a.size))
            data.append(dict(xg=xg.reshape(-1), wq=wq.reshape(-1), val=val, der=der,
                             cn=cn, B=B, D=D, BT=B.T.tocsr(), DT=D.T.tocsr()))
        return data

    @property
    def gauss_shape(self):
        return tuple(d["xg"].size for d in self._gauss)

    def gauss_coords(self, name) -> np.ndarray:
        i = self.index(name)
        shp = [1] * self.ndim
        shp[i] = -1
        return self._gauss[i]["xg"].reshape(shp)

    def y_norm_gauss(self) -> np.ndarray:
        if "rho" in self.names:
            return self.gauss_coords("rho")
        y1 = self.gauss_coords("y1") if "y1" in self.names else 0.0
        r = self.gauss_coords("r") if "r" in self.names else 0.0
        return np.sqrt(y1 ** 2 + r ** 2)

    @cached_property
    def gauss_weights(self) -> np.ndarray:
        w = np.array(self.angular_factor)
        for d in self._gauss:
            w = np.multiply.outer(w, d["wq"])
        return w

    @cached_property
    def metric(self):
        """Per-axis factor multiplying (d_axis u)^2 at Gauss points."""
        out = []
        for a in self.axes:
            if a.name == "theta":
                out.append(1.0 / self.gauss_coords("rho") ** 2)
            else:
                out.append(1.0)
        return out

    @staticmethod
    def _apply(mat, X, axis):
        Xm = np.moveaxis(X, axis, 0)
        shp = Xm.shape
        Y = mat @ Xm.reshape(shp[0], -1)
        return np.moveaxis(Y.reshape((mat.shape[0],) + shp[1:]), 0, axis)

    def at_gauss(self, u) -> np.ndarray:
        X = np.asarray(u, float)
        for i, d in enumerate(self._gauss):
            X = self._apply(d["B"], X, i)
        return X

    def grad_at_gauss(self, u):
        """Coordinate derivatives at Gauss points (no metric applied)."""
        u = np.asarray(u, float)
        out = []
        for k in range(self.ndim):
            X = u
            for i, d in enumerate(self._gauss):
                X = self._apply(d["D"] if i == k else d["B"], X, i)
            out.append(X)
        return out

    def at_gauss_T(self, G) -> np.ndarray:
        X = G
        for i, d in enumerate(self._gauss):
            X = self._apply(d["BT"], X, i)
        return X

    def grad_at_gauss_T(self, Gs) -> np.ndarray:
        total = None
        for k, G in enumerate(Gs):
            X = G
            for i, d in enumerate(self._gauss):
                X = self._apply(d["DT"] if i == k else d["BT"], X, i)
            total = X if total is None else total + X
        return total

    def grad_sq_at_gauss(self, u):
        gs = self.grad_at_gauss(u)
        return sum(c * g * g for c, g in zip(self.metric, gs)), gs

    # -- weighted quadrature for |y|-weighted norms -----------------------------
    def quadrature(self, ng: int = 2, y_power: float = 0.0) -> "WeightedQuadrature":
        key = (int(ng), float(y_power))
        cache = self.__dict__.setdefault("_quad_cache", {})
        if key not in cache:
            cache[key] = WeightedQuadrature(self, int(ng), float(y_power))
        return cache[key]

    # -- lumped nodal weights -------------------------------------------------
    def lumped_weights(self, y_power: float = 0.0) -> np.ndarray:
        """Nodal weights  int_{dual cell} |y|^{y_power} dmu  (exact in the radius)."""
        if "rho" in self.names or y_power == 0.0:
            w = np.array(self.angular_factor)
            for a in self.axes:
                w = np.multiply.outer(w, a.lumped(y_power if a.name == "rho" else 0.0))
            return w
        return self._lumped_cartesian(y_power)

    def _lumped_cartesian(self, y_power):
        m = self.m
        names = self.names
        y1ax = self.axis("y1") if "y1" in names else None
        rax = self.axis("r") if "r" in names else None
        if y1ax is None or rax is None:
            # |y| is a single coordinate
            ax = y1ax if y1ax is not None else rax
            w = np.array(self.angular_factor)
            for a in self.axes:
                w = np.multiply.outer(w, a.lumped(y_power) if a is ax else a.lumped())
            return w
        e1, e2 = y1ax.dual_edges, rax.dual_edges
        xg, wg = np.polynomial.legendre.leggauss(10)
        a1, b1 = e1[:-1], e1[1:]
        a2, b2 = e2[:-1], e2[1:]
        p1 = 0.5 * (a1 + b1)[:, None] + 0.5 * (b1 - a1)[:, None] * xg
        w1 = 0.5 * (b1 - a1)[:, None] * wg
        p2 = 0.5 * (a2 + b2)[:, None] + 0.5 * (b2 - a2)[:, None] * xg
        w2 = 0.5 * (b2 - a2)[:, None] * wg * p2 ** (m - 2)
        rr = np.sqrt(p1[:, None, :, None] ** 2 + p2[None, :, None, :] ** 2)
        W = np.einsum("ik,jl,ijkl->ij", w1, w2, rr ** y_power)
        for i in np.nonzero(a1 == 0.0)[0]:
            for j in np.nonzero(a2 == 0.0)[0]:
                W[i, j] = _corner_integral(b1[i], b2[j], y_power, m)
        i1, i2 = self.index("y1"), self.index("r")
        out = np.full(self.shape, self.angular_factor)
        for k, a in enumerate(self.axes):
            if k in (i1, i2):
                continue
            shp = [1] * self.ndim
            shp[k] = -1
            out = out * a.lumped().reshape(shp)
        shp = [1] * self.ndim
        shp[i1], shp[i2] = self.shape[i1], self.shape[i2]
        Wb = W if i1 < i2 else W.T
        return out * Wb.reshape(shp)


class WeightedQuadrature:
    """Tensor Gauss rule for  int |y|^{y_power} f dmu  with Q1 interpolation.

    On a polar grid the factor rho^{m-1+y_power} is separable; in the cell
    touching rho = 0 a Gauss-Jacobi rule absorbs it exactly, elsewhere it is
    sampled at interior Gauss points.  Cartesian grids sample |y| pointwise."""

    def __init__(self, grid, ng, y_power):
        from scipy.special import roots_jacobi
        self.grid, self.ng, self.y_power = grid, ng, y_power
        self.zero_axis = None
        xr, wr = np.polynomial.legendre.leggauss(ng)
        self.ops, self.pts = [], []
        W = np.array(grid.angular_factor)
        polar = "rho" in grid.names
        for a in grid.axes:
            lo, hi, cn = a.cell_bounds
            h = hi - lo
            X = np.repeat(xr[None, :], h.size, 0)
            Wr = np.repeat(wr[None, :], h.size, 0)
            extra = y_power if (polar and a.name == "rho") else 0.0
            if a.name in RADIAL_NAMES:
                e = a.exponent + extra
                if lo[0] == 0.0 and not a.mirror and e <= -1.0:
                    # only finite for functions vanishing on the axis
                    self.zero_axis = (grid.index(a.name), e)
                    special = False
                elif lo[0] == 0.0 and not a.mirror:
                    xj, wj = roots_jacobi(ng, 0.0, e)
                    X[0], Wr[0] = xj, wj
                    special = True
                else:
                    special = False
            else:
                special = False
            xg = lo[:, None] + 0.5 * (X + 1.0) * h[:, None]
            if a.name == "theta":
                wq = 0.5 * h[:, None] * Wr * a.weight(xg)
            else:
                with np.errstate(divide="ignore"):
                    wq = 0.5 * h[:, None] * Wr * xg ** (a.exponent + extra)
                if special:
                    wq[0] = (0.5 * h[0]) ** (a.exponent + extra + 1.0) * Wr[0]
            s = 0.5 * (X + 1.0)
            val = np.stack([1.0 - s, s], axis=-1)
            if a.mirror:
                val[0] = 0.5
            nc = h.size
            rows = np.repeat(np.arange(nc * ng), 2)
            cols = np.repeat(cn, ng, axis=0).reshape(nc, ng, 2).reshape(-1)
            B = sp.csr_matrix((val.reshape(-1), (rows, cols)), shape=(nc * ng, a.size))
            self.ops.append((B, B.T.tocsr()))
            self.pts.append(xg.reshape(-1))
            W = np.multiply.outer(W, wq.reshape(-1))
        if not polar and y_power != 0.0:
            y1 = self.coords("y1") if "y1" in grid.names else 0.0
            r = self.coords("r") if "r" in grid.names else 0.0
            W = W * np.sqrt(y1 ** 2 + r ** 2) ** y_power
        if not np.all(np.isfinite(W)):
            raise ValueError("weighted quadrature produced a non-finite weight")
        self.weights = W

    def coords(self, name):
        """Quadrature-point coordinate array broadcastable to the rule shape."""
        i = self.grid.index(name)
        shp = [1] * self.grid.ndim
        shp[i] = -1
        return self.pts[i].reshape(shp)

    def at(self, u):
        X = np.asarray(u, float)
        for i, (B, _) in enumerate(self.ops):
            X = AxiGrid._apply(B, X, i)
        return X

    def at_T(self, G):
        X = G
        for i, (_, BT) in enumerate(self.ops):
            X = AxiGrid._apply(BT, X, i)
        return X

    def check_support(self, u):
        if self.zero_axis is None:
            return
        i, e = self.zero_axis
        edge = np.take(np.asarray(u), 0, axis=i)
        if np.any(edge != 0.0):
            raise ValueError(f"weight with exponent {e:g} diverges at the axis; "
                             "the function must vanish there")

    def integral(self, u, s):
        """int |y|^{y_power} |u|^s dmu."""
        return float(np.sum(self.weights * np.abs(self.at(u)) ** s))

    def integral_and_gradient(self, u, s):
        ug = self.at(u)
        val = float(np.sum(self.weights * np.abs(ug) ** s))
        g = self.at_T(s * self.weights * np.abs(ug) ** (s - 1) * np.sign(ug))
        return val, g


def _corner_integral(a, b, power, m):
    """int over [0,a]x[0,b] of (y1^2+r^2)^{power/2} r^{m-2} dy1 dr, radial part exact."""
    e = power + m
    if e <= 0:
        return np.inf
    xg, wg = np.polynomial.legendre.leggauss(24)
    phis = np.arctan2(b, a)
    total = 0.0
    for lo, hi, lim in ((0.0, phis, lambda f: a / np.cos(f)), (phis, np.pi / 2, lambda f: b / np.sin(f))):
        f = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg
        total += 0.5 * (hi - lo) * np.sum(wg * np.sin(f) ** (m - 2) * lim(f) ** e / e)
    return total


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: AxiGrid
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        mk = np.broadcast_to(np.asarray(self.mask, bool), self.grid.shape).copy()
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        if np.any(v[mk] != 0.0):
            raise ValueError("values must vanish on Dirichlet-masked nodes")
        v.setflags(write=False)
        mk.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", mk)

    @classmethod
    def masked(cls, grid, values, mask):
        v = np.array(values, dtype=float)
        v[np.broadcast_to(mask, grid.shape)] = 0.0
        return cls(grid, v, mask)

    def with_values(self, values) -> "GridFunction":
        return GridFunction.masked(self.grid, values, self.mask)

    def scaled(self, c) -> "GridFunction":
        return GridFunction(self.grid, c * self.values, self.mask)

    def dilated(self, lam) -> "GridFunction":
        """v(x/lam) carried on the dilated grid (nodes times lam)."""
        return GridFunction(self.grid.dilated(lam), self.values, self.mask)


def boundary_mask(grid: AxiGrid, **sides) -> np.ndarray:
    """Dirichlet mask from per-axis side flags, e.g. rho=('low','high')."""
    mk = np.zeros(grid.shape, bool)
    for name, which in sides.items():
        if isinstance(which, str):
            which = (which,)
        i = grid.index(name)
        sl = [slice(None)] * grid.ndim
        for w in which:
            sl[i] = 0 if w == "low" else -1
            mk[tuple(sl)] = True
    return mk
