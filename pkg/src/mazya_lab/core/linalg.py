"""Linear algebra on AxiGrids: Q1 stiffness assembly and preconditioner solves.

TensorSolver inverts the unit-coefficient weighted Laplacian restricted to a
tensor free set exactly: generalized eigendecompositions on every axis except
one, followed by batched tridiagonal solves along the remaining axis (fast
diagonalization).  Masked, non-tensor free sets fall back on sparse assembly
with a direct factorization or algebraic multigrid.
"""

from __future__ import annotations

import string

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SPLU_LIMIT = 60000


def assemble_stiffness(grid, coef=None) -> sp.csr_matrix:
    """Global matrix of  sum_g coef_g sum_d metric_d dN_i/dx_d dN_j/dx_d w_g.

    coef: Gauss-point array (broadcastable to grid.gauss_shape) or None for 1."""
    G = grid._gauss
    nd = grid.ndim
    W = grid.gauss_weights if coef is None else grid.gauss_weights * coef
    W = np.broadcast_to(W, grid.gauss_shape)
    ncs = [g["val"].shape[0] for g in G]
    ngs = [g["val"].shape[1] for g in G]
    letters = string.ascii_letters
    c_idx = letters[0:nd]
    k_idx = letters[nd:2 * nd]
    a_idx = letters[2 * nd:3 * nd]
    b_idx = letters[3 * nd:4 * nd]
    K = 0.0
    for d in range(nd):
        Cd = W * grid.metric[d] if not np.isscalar(grid.metric[d]) else W * grid.metric[d]
        Cd = np.broadcast_to(Cd, grid.gauss_shape).reshape(
            [x for pair in zip(ncs, ngs) for x in pair])
        ops = []
        subs = ["".join(c + k for c, k in zip(c_idx, k_idx))]
        for e in range(nd):
            X = G[e]["der"] if e == d else G[e]["val"]
            S = X[:, :, :, None] * X[:, :, None, :]
            ops.append(S)
            subs.append(c_idx[e] + k_idx[e] + a_idx[e] + b_idx[e])
        out = c_idx + a_idx + b_idx
        K = K + np.einsum(",".join(subs) + "->" + out, Cd, *ops, optimize=True)
    # global indices
    shape = grid.shape
    strides = np.cumprod((1,) + shape[::-1])[:-1][::-1]
    gidx_a = 0
    for e in range(nd):
        cn = G[e]["cn"]  # (nc, 2)
        shp = [1] * (3 * nd)
        shp[e] = ncs[e]
        shp[nd + e] = 2
        gidx_a = gidx_a + (cn * strides[e]).reshape(shp)
    gidx_b = 0
    for e in range(nd):
        cn = G[e]["cn"]
        shp = [1] * (3 * nd)
        shp[e] = ncs[e]
        shp[2 * nd + e] = 2
        gidx_b = gidx_b + (cn * strides[e]).reshape(shp)
    rows = np.broadcast_to(gidx_a, K.shape).ravel()
    cols = np.broadcast_to(gidx_b, K.shape).ravel()
    N = int(np.prod(shape))
    return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def assemble_mass_lumped(grid, y_power=0.0):
    return grid.lumped_weights(y_power)


def is_tensor_mask(mask) -> bool:
    """True if the free set (~mask) is a Cartesian product of per-axis sets."""
    free = ~np.asarray(mask)
    if not free.any():
        return True
    sets = [free.any(axis=tuple(j for j in range(free.ndim) if j != i)) for i in range(free.ndim)]
    prod = sets[0]
    for s in sets[1:]:
        prod = np.multiply.outer(prod, s)
    return bool(np.array_equal(prod, free))


def _axis_matrices(g, weight_fn=None):
    """1-D mass and stiffness from per-cell Gauss data of one axis."""
    val, der, cn = g["val"], g["der"], g["cn"]
    nc, ng, _ = val.shape
    wq = g["wq"].reshape(nc, ng)
    if weight_fn is not None:
        wq = wq * weight_fn(g["xg"].reshape(nc, ng))
    N = int(cn.max()) + 1
    Me = np.einsum("ck,cka,ckb->cab", wq, val, val)
    Ke = np.einsum("ck,cka,ckb->cab", wq, der, der)
    rows = np.repeat(cn, 2, axis=1).ravel()
    cols = np.tile(cn, (1, 2)).ravel()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(N, N)).toarray()
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(N, N)).toarray()
    return M, K


def _tri_parts(A):
    return np.diag(A, -1).copy(), np.diag(A).copy(), np.diag(A, 1).copy()


class TensorSolver:
    """Exact solve with the unit-coefficient Q1 Laplacian (+ optional shift*mass)
    on a tensor free set."""

    def __init__(self, grid, mask, shift=0.0):
        self.grid = grid
        free = ~np.asarray(mask)
        if not is_tensor_mask(mask):
            raise ValueError("TensorSolver needs a tensor-product free set")
        nd = grid.ndim
        self.sets = [np.nonzero(free.any(axis=tuple(j for j in range(nd) if j != i)))[0]
                     for i in range(nd)]
        self.free = free
        s = grid.index("rho") if "rho" in grid.names else 0
        self.s = s
        G = grid._gauss
        # metric factors depend only on the rho coordinate by construction
        metric_fn = [(lambda x: 1.0 / x ** 2) if a.name == "theta" else None for a in grid.axes]
        self.eig = {}
        for e in range(nd):
            if e == s:
                continue
            M, K = _axis_matrices(G[e])
            idx = self.sets[e]
            M, K = M[np.ix_(idx, idx)], K[np.ix_(idx, idx)]
            lam, V = sla.eigh(K, M)
            self.eig[e] = (lam, V)
        idx = self.sets[s]
        Ms, Ks = _axis_matrices(G[s])
        Ms = Ms[np.ix_(idx, idx)]
        Ks = Ks[np.ix_(idx, idx)]
        self.parts = {"K": _tri_parts(Ks), "M": _tri_parts(Ms)}
        for e in range(nd):
            if e == s:
                continue
            Me, _ = _axis_matrices(G[s], metric_fn[e])
            self.parts[e] = _tri_parts(Me[np.ix_(idx, idx)])
        c = grid.angular_factor
        others = [e for e in range(nd) if e != s]
        no = len(others)
        arrays = []
        for k in range(3):
            arr = self.parts["K"][k].reshape([-1] + [1] * no)
            for j, e in enumerate(others):
                lamshape = [1] * no
                lamshape[j] = -1
                lam = self.eig[e][0].reshape(lamshape)
                arr = arr + self.parts[e][k].reshape([-1] + [1] * no) * lam[None]
            if shift:
                arr = arr + shift * self.parts["M"][k].reshape([-1] + [1] * no)
            full = [arr.shape[0]] + [len(self.sets[e]) for e in others]
            arrays.append(np.broadcast_to(arr, full).copy())
        self.tri = [c * a for a in arrays]
        self._factor()

    def _factor(self):
        lo, di, up = self.tri
        n = di.shape[0]
        cp = np.empty_like(up)
        dp = np.empty_like(di)
        dp[0] = di[0]
        for i in range(1, n):
            cp[i - 1] = up[i - 1] / dp[i - 1]
            dp[i] = di[i] - lo[i - 1] * cp[i - 1]
        self._cp, self._dp = cp, dp

    def _tri_solve(self, b):
        lo = self.tri[0]
        cp, dp = self._cp, self._dp
        n = b.shape[0]
        y = np.empty_like(b)
        y[0] = b[0] / dp[0]
        for i in range(1, n):
            y[i] = (b[i] - lo[i - 1] * y[i - 1]) / dp[i]
        for i in range(n - 2, -1, -1):
            y[i] -= cp[i] * y[i + 1]
        return y

    def solve(self, rhs):
        """rhs: full grid array (masked entries ignored); returns full array."""
        nd = self.grid.ndim
        b = rhs[np.ix_(*self.sets)]
        for e, (lam, V) in self.eig.items():
            b = self.grid._apply(V.T, b, e)
        b = np.moveaxis(b, self.s, 0)
        x = self._tri_solve(b)
        x = np.moveaxis(x, 0, self.s)
        for e, (lam, V) in self.eig.items():
            x = self.grid._apply(V, x, e)
        out = np.zeros(self.grid.shape)
        out[np.ix_(*self.sets)] = x
        return out

    __call__ = solve


class SparseSolver:
    """Solve with an assembled (possibly reweighted) stiffness on a masked set."""

    def __init__(self, grid, mask, coef=None, shift_weights=None, method="auto"):
        self.grid = grid
        self.free = ~np.asarray(mask)
        self.fidx = np.nonzero(self.free.ravel())[0]
        A = assemble_stiffness(grid, coef)
        if shift_weights is not None:
            A = A + sp.diags(np.ravel(shift_weights))
        A = A[self.fidx][:, self.fidx].tocsc()
        self.A = A
        n = A.shape[0]
        if method == "auto":
            method = "splu" if n <= SPLU_LIMIT else "amg"
        self.method = method
        if method == "splu":
            self._lu = spla.splu(A, permc_spec="COLAMD")
        else:
            import pyamg
            self._ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric")
            self._M = self._ml.aspreconditioner(cycle="V")

    def solve(self, rhs, tol=1e-10):
        b = np.ravel(rhs)[self.fidx]
        if self.method == "splu":
            x = self._lu.solve(b)
        else:
            x, info = spla.cg(self.A, b, rtol=tol, M=self._M, maxiter=500)
        out = np.zeros(self.grid.shape)
        out.ravel()[self.fidx] = x
        return out

    __call__ = solve


def make_solver(grid, mask, coef=None):
    if coef is None and is_tensor_mask(mask):
        return TensorSolver(grid, mask)
    return SparseSolver(grid, mask, coef)
