"""One-dimensional staggered summation-by-parts (SBP) operators.

This module builds the six matrices that make up a staggered SBP operator
set on the unit interval: the difference operators D (cells to nodes) and
Dhat (nodes to cells), the interpolation operators P and Phat with the same
shapes, and the diagonal quadrature norms M (nodes) and Mhat (cells).

The bounded grids are

    nodes:  x_i = i*h,                 i = 0..N
    cells:  xhat_0 = 0, xhat_{N+1} = 1, xhat_j = (j - 1/2)*h, j = 1..N

so the cell grid contains the two boundary points.  The operator set
satisfies two exact algebraic identities,

    M @ D + Dhat.T @ diag(Mhat) = E      (E has -1 and +1 in its corners)
    M @ P - Phat.T @ diag(Mhat) = 0

which are what the energy estimates of the 2-D scheme rest on.  Boundary
closures are read from a CoefficientTable; two verified tables ship with
the package (a minimal and a deliberately large interpolation norm).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import scipy.sparse as sp

__all__ = [
    "StaggeredGrid1D",
    "CoefficientTable",
    "OperatorSet1D",
    "VerificationReport",
    "build_grids",
    "instantiate",
    "verify_operator_set",
    "interpolation_norm",
    "load_table",
    "default_table",
]

#: Number of boundary-modified rows in each closure block.
BOUNDARY_WIDTH = 4

#: Interior stencils (4th order).  Coefficients are listed with increasing
#: grid index; the difference stencil carries an implicit 1/h.
INTERIOR_D = np.array([1.0, -27.0, 27.0, -1.0]) / 24.0
INTERIOR_P = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0

_BUILTIN_TABLES = {
    "min_norm": "sbp42_min_norm.json",
    "max_norm": "sbp42_max_norm.json",
}


@dataclass(frozen=True)
class StaggeredGrid1D:
    """A pair of staggered 1-D grids (nodes and cells) on [0, 1]."""

    N: int
    h: float
    nodes: np.ndarray
    cells: np.ndarray
    periodic: bool = False


def build_grids(N, periodic=False, min_cells=2 * BOUNDARY_WIDTH):
    """Build the staggered node/cell grid pair with N cells.

    ``min_cells`` may be lowered for small algebraic tests, but operators
    cannot be instantiated below twice the closure width.
    """
    if N < min_cells:
        raise ValueError(
            f"need at least {min_cells} cells (got N={N}); boundary closures "
            f"are {BOUNDARY_WIDTH} rows wide on each side"
        )
    h = 1.0 / N
    if periodic:
        nodes = h * np.arange(N)
        cells = h * (np.arange(N) + 0.5)
    else:
        nodes = h * np.arange(N + 1)
        cells = np.empty(N + 2)
        cells[0] = 0.0
        cells[-1] = 1.0
        cells[1:-1] = h * (np.arange(1, N + 1) - 0.5)
    return StaggeredGrid1D(N=N, h=h, nodes=nodes, cells=cells, periodic=periodic)


def _parse_reals(obj):
    arr = np.asarray(obj, dtype=object)
    return np.array([[float(v) for v in row] for row in np.atleast_2d(arr)])


@dataclass(frozen=True)
class CoefficientTable:
    """Interior stencils, boundary closures, and norm weights of a 4/2 pair.

    The closure blocks hold the first ``BOUNDARY_WIDTH`` rows of each
    operator on a unit-spacing grid; the bottom rows are obtained by
    mirroring (with a sign flip for the difference operators).
    """

    interior_d: np.ndarray
    interior_p: np.ndarray
    closure_d: np.ndarray      # (4, 6) cell columns 0..5
    closure_dhat: np.ndarray   # (4, 5) node columns 0..4
    closure_p: np.ndarray      # (4, 6)
    closure_phat: np.ndarray   # (4, 5)
    m_weights: np.ndarray      # (4,) modified node weights, unit spacing
    mhat_weights: np.ndarray   # (4,) modified cell weights, unit spacing
    boundary_order: int = 2
    provenance: str = ""

    def __post_init__(self):
        if np.any(self.m_weights <= 0) or np.any(self.mhat_weights <= 0):
            raise ValueError("norm weights must be strictly positive")

    @classmethod
    def from_dict(cls, d):
        return cls(
            interior_d=_parse_reals(d["interior_d"])[0],
            interior_p=_parse_reals(d["interior_p"])[0],
            closure_d=_parse_reals(d["closure_d"]),
            closure_dhat=_parse_reals(d["closure_dhat"]),
            closure_p=_parse_reals(d["closure_p"]),
            closure_phat=_parse_reals(d["closure_phat"]),
            m_weights=_parse_reals(d["m_weights"])[0],
            mhat_weights=_parse_reals(d["mhat_weights"])[0],
            boundary_order=int(d.get("boundary_order", 2)),
            provenance=str(d.get("provenance", "")),
        )

    def to_dict(self):
        fmt = lambda a: np.vectorize(lambda v: "%.17e" % v)(a).tolist()
        return {
            "interior_d": fmt(self.interior_d),
            "interior_p": fmt(self.interior_p),
            "closure_d": fmt(self.closure_d),
            "closure_dhat": fmt(self.closure_dhat),
            "closure_p": fmt(self.closure_p),
            "closure_phat": fmt(self.closure_phat),
            "m_weights": fmt(self.m_weights),
            "mhat_weights": fmt(self.mhat_weights),
            "boundary_order": self.boundary_order,
            "provenance": self.provenance,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def load_table(source="min_norm"):
    """Load a coefficient table from a file path or a built-in name."""
    if source in _BUILTIN_TABLES:
        ref = resources.files("stagwave") / "data" / _BUILTIN_TABLES[source]
        return CoefficientTable.from_dict(json.loads(ref.read_text()))
    return CoefficientTable.load(source)


def default_table():
    """The package default table; STAGWAVE/SBP_COEFF_PATH env overrides."""
    override = os.environ.get("SBP_COEFF_PATH")
    if override:
        return load_table(override)
    return load_table("min_norm")


@dataclass(frozen=True)
class OperatorSet1D:
    """The six 1-D staggered SBP matrices for one resolution.

    D, Dhat, P, Phat are CSR matrices; m and mhat are the diagonals of the
    norm matrices (spacing included).  Immutable after construction.
    """

    D: sp.csr_matrix
    Dhat: sp.csr_matrix
    P: sp.csr_matrix
    Phat: sp.csr_matrix
    m: np.ndarray
    mhat: np.ndarray
    N: int
    h: float
    periodic: bool = False
    boundary_width: int = BOUNDARY_WIDTH
    interior_order: int = 4
    boundary_order: int = 2

    @property
    def n_nodes(self):
        return self.N if self.periodic else self.N + 1

    @property
    def n_cells(self):
        return self.N if self.periodic else self.N + 2


def _banded_from_closures(n_rows, n_cols, closure, interior, first_col_of_row):
    """Assemble a bounded operator from a top closure block and an interior
    stencil.  ``first_col_of_row(i)`` gives the leftmost interior column of
    row i; the bottom closure is the mirror image of the top one (callers
    apply the sign separately)."""
    b, w = closure.shape
    rows, cols, vals = [], [], []
    for i in range(b):
        for j in range(w):
            rows.append(i)
            cols.append(j)
            vals.append(closure[i, j])
    for i in range(b, n_rows - b):
        c0 = first_col_of_row(i)
        for k in range(4):
            rows.append(i)
            cols.append(c0 + k)
            vals.append(interior[k])
    for i in range(b):
        for j in range(w):
            rows.append(n_rows - 1 - i)
            cols.append(n_cols - 1 - j)
            vals.append(closure[i, j])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return A


def _mirror_sign(A, n_rows, flip):
    if not flip:
        return A
    A = A.tolil()
    b = BOUNDARY_WIDTH
    A[n_rows - b:, :] *= -1.0
    return A


def _periodic_banded(n, stencil, offsets, scale):
    rows, cols, vals = [], [], []
    for i in range(n):
        for k, off in enumerate(offsets):
            rows.append(i)
            cols.append((i + off) % n)
            vals.append(stencil[k] * scale)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def instantiate(table, N, periodic=False):
    """Instantiate the operator set at N cells with spacing h = 1/N."""
    b = BOUNDARY_WIDTH
    if N < 2 * b:
        raise ValueError(f"boundary closures overlap: need N >= {2 * b}, got {N}")
    h = 1.0 / N

    if periodic:
        # Nodes at i*h, cells at (i+1/2)*h.  Node i sees cells i-2..i+1,
        # cell j sees nodes j-1..j+2; all offsets are +/- h/2, 3h/2.
        D = _periodic_banded(N, table.interior_d, [-2, -1, 0, 1], 1.0 / h)
        Dhat = _periodic_banded(N, table.interior_d, [-1, 0, 1, 2], 1.0 / h)
        P = _periodic_banded(N, table.interior_p, [-2, -1, 0, 1], 1.0)
        Phat = _periodic_banded(N, table.interior_p, [-1, 0, 1, 2], 1.0)
        m = np.full(N, h)
        mhat = np.full(N, h)
        return OperatorSet1D(D=D, Dhat=Dhat, P=P, Phat=Phat, m=m, mhat=mhat,
                             N=N, h=h, periodic=True,
                             boundary_order=table.boundary_order)

    # Bounded case.  Interior D row i covers cells i-1..i+2 (cell j sits at
    # (j-1/2)h); interior Dhat row j covers nodes j-2..j+1.
    D = _banded_from_closures(N + 1, N + 2, table.closure_d,
                              table.interior_d, lambda i: i - 1)
    D = _mirror_sign(D, N + 1, flip=True).tocsr() * (1.0 / h)
    Dhat = _banded_from_closures(N + 2, N + 1, table.closure_dhat,
                                 table.interior_d, lambda j: j - 2)
    Dhat = _mirror_sign(Dhat, N + 2, flip=True).tocsr() * (1.0 / h)
    P = _banded_from_closures(N + 1, N + 2, table.closure_p,
                              table.interior_p, lambda i: i - 1).tocsr()
    Phat = _banded_from_closures(N + 2, N + 1, table.closure_phat,
                                 table.interior_p, lambda j: j - 2).tocsr()

    m = np.ones(N + 1)
    m[:b] = table.m_weights
    m[-b:] = table.m_weights[::-1]
    m *= h
    mhat = np.ones(N + 2)
    mhat[:b] = table.mhat_weights
    mhat[-b:] = table.mhat_weights[::-1]
    mhat *= h
    if np.any(m <= 0) or np.any(mhat <= 0):
        raise ValueError("non-positive norm weight in coefficient table")
    return OperatorSet1D(D=D, Dhat=Dhat, P=P, Phat=Phat, m=m, mhat=mhat,
                         N=N, h=h, periodic=False,
                         boundary_order=table.boundary_order)


@dataclass
class VerificationReport:
    """Maximum residuals of the algebraic and accuracy identities.

    All entries are reported; callers decide on thresholds.
    """

    residuals: dict = field(default_factory=dict)

    @property
    def max_residual(self):
        keys = [k for k in self.residuals
                if not k.startswith(("min_", "smin_"))]
        return max(self.residuals[k] for k in keys)

    def passes(self, tol):
        ok = self.max_residual <= tol
        ok = ok and self.residuals["min_norm_weight"] > 0
        ok = ok and self.residuals["smin_P"] > 0
        ok = ok and self.residuals["smin_Phat"] > 0
        return ok


def _local_accuracy(A, pos_out, pos_in, kmax, rhs_factor, rows=None):
    """Max residual of A applied to monomials, evaluated row-locally.

    For row i the monomial is centered at pos_out[i], which keeps the check
    meaningful on periodic grids where global x^k wraps.
    """
    A = A.tocsr()
    n = A.shape[0]
    L = pos_in[-1] - pos_in[0] if len(pos_in) > 1 else 1.0
    period = 1.0
    worst = 0.0
    row_iter = range(n) if rows is None else rows
    for i in row_iter:
        sl = slice(A.indptr[i], A.indptr[i + 1])
        cols = A.indices[sl]
        vals = A.data[sl]
        xi = pos_in[cols] - pos_out[i]
        # unwrap across the periodic seam
        xi = np.where(xi > 0.5 * period, xi - period, xi)
        xi = np.where(xi < -0.5 * period, xi + period, xi)
        for k in range(kmax + 1):
            want = rhs_factor(k, 0.0)
            got = float(vals @ xi**k)
            worst = max(worst, abs(got - want))
    return worst


def verify_operator_set(ops):
    """Check the SBP identities, accuracy, quadrature, and positivity."""
    res = {}
    D = ops.D.toarray()
    Dh = ops.Dhat.toarray()
    P = ops.P.toarray()
    Ph = ops.Phat.toarray()
    M = np.diag(ops.m)
    Mh = np.diag(ops.mhat)
    b = ops.boundary_width

    E = np.zeros((ops.n_nodes, ops.n_cells))
    if not ops.periodic:
        E[0, 0] = -1.0
        E[-1, -1] = 1.0
    res["sbp_difference"] = np.abs(M @ D + Dh.T @ Mh - E).max()
    res["sbp_interpolation"] = np.abs(M @ P - Ph.T @ Mh).max()

    grid = build_grids(ops.N, periodic=ops.periodic, min_cells=4)
    x, xh = grid.nodes, grid.cells

    # Monomials are recentered at each output point, so the derivative
    # target for (x - x_i)^k at x_i is 1 for k = 1 and 0 otherwise, and the
    # interpolation target is 1 for k = 0.  Recentering keeps the check
    # meaningful on periodic grids where a global x^k wraps at the seam.
    def d_target(k, _):
        return 1.0 if k == 1 else 0.0

    def p_target(k, _):
        return 1.0 if k == 0 else 0.0

    nN, nC = ops.n_nodes, ops.n_cells
    inner_nodes = range(b, nN - b) if not ops.periodic else None
    inner_cells = range(b, nC - b) if not ops.periodic else None

    res["accuracy_D_global"] = _local_accuracy(ops.D, x, xh, 2, d_target)
    res["accuracy_D_interior"] = _local_accuracy(ops.D, x, xh, 4, d_target,
                                                 rows=inner_nodes)
    res["accuracy_Dhat_global"] = _local_accuracy(ops.Dhat, xh, x, 2, d_target)
    res["accuracy_Dhat_interior"] = _local_accuracy(ops.Dhat, xh, x, 4,
                                                    d_target, rows=inner_cells)
    res["accuracy_P_global"] = _local_accuracy(ops.P, x, xh, 1, p_target)
    res["accuracy_P_interior"] = _local_accuracy(ops.P, x, xh, 3, p_target,
                                                 rows=inner_nodes)
    res["accuracy_Phat_global"] = _local_accuracy(ops.Phat, xh, x, 1, p_target)
    res["accuracy_Phat_interior"] = _local_accuracy(ops.Phat, xh, x, 3,
                                                    p_target, rows=inner_cells)

    # On periodic grids only constants are meaningful quadrature targets;
    # global monomials are not periodic functions.
    quad = 0.0
    for k in range(1 if ops.periodic else 4):
        quad = max(quad, abs(ops.m @ x**k - 1.0 / (k + 1)))
        quad = max(quad, abs(ops.mhat @ xh**k - 1.0 / (k + 1)))
    res["quadrature"] = quad

    res["min_norm_weight"] = min(ops.m.min(), ops.mhat.min())
    res["smin_P"] = np.linalg.svd(P, compute_uv=False).min()
    res["smin_Phat"] = np.linalg.svd(Ph, compute_uv=False).min()
    return VerificationReport(residuals=res)


def interpolation_norm(ops, tol=1e-10, max_iter=100_000):
    """Spectral norm of P @ Phat by power iteration on its Gram matrix."""
    PP = (ops.P @ ops.Phat).toarray()
    B = PP.T @ PP
    rng = np.random.default_rng(0)
    x = rng.standard_normal(B.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = B @ x
        lam_new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return float(np.sqrt(lam_new))
        lam = lam_new
    raise RuntimeError("power iteration did not converge")
