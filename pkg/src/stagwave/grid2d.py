"""Two-dimensional staggered grids and tensor-product operators.

Fields live on four index spaces of a logically rectangular grid on the
unit square: cell centers (pressure), edge-1 points (first velocity
component, nodes in direction 1 and cells in direction 2), edge-2 points
(the mirror image), and corner nodes.  All fields are stored flat in
row-major order with the second index fastest.

Every 2-D operator is a Kronecker product of 1-D factors and is applied
matrix-free as a pair of line sweeps; ``assemble_sparse`` materializes the
product only for benchmarking and direct eigenvalue studies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .sbp1d import OperatorSet1D, build_grids

__all__ = [
    "StaggeredGrid2D",
    "GridFunction",
    "Operator2D",
    "NormWeights2D",
    "make_grid2d",
    "loc_shape",
    "loc_coords",
    "make_operators",
    "kron_apply",
    "kron_apply_transpose",
    "assemble_sparse",
    "norm_weights",
    "boundary_restrict",
    "boundary_lift",
    "save_field",
    "load_field",
]

LOCATIONS = ("cell", "edge1", "edge2", "node")
SIDES = ("L", "R", "B", "T")


@dataclass(frozen=True)
class StaggeredGrid2D:
    """Cell counts, spacings, and 1-D coordinate arrays per direction."""

    n1: int
    n2: int
    h1: float
    h2: float
    periodic1: bool = False
    periodic2: bool = False
    nodes1: np.ndarray = None
    cells1: np.ndarray = None
    nodes2: np.ndarray = None
    cells2: np.ndarray = None


def make_grid2d(n1, n2=None, periodic1=False, periodic2=False):
    if n2 is None:
        n2 = n1
    g1 = build_grids(n1, periodic=periodic1)
    g2 = build_grids(n2, periodic=periodic2)
    return StaggeredGrid2D(n1=n1, n2=n2, h1=g1.h, h2=g2.h,
                           periodic1=periodic1, periodic2=periodic2,
                           nodes1=g1.nodes, cells1=g1.cells,
                           nodes2=g2.nodes, cells2=g2.cells)


def _sizes(grid, direction):
    if direction == 1:
        n, per = grid.n1, grid.periodic1
    else:
        n, per = grid.n2, grid.periodic2
    if per:
        return n, n  # (nodes, cells)
    return n + 1, n + 2


def loc_shape(grid, location):
    """Array shape (dir-1 size, dir-2 size) of a field at ``location``."""
    nn1, nc1 = _sizes(grid, 1)
    nn2, nc2 = _sizes(grid, 2)
    return {
        "cell": (nc1, nc2),
        "edge1": (nn1, nc2),
        "edge2": (nc1, nn2),
        "node": (nn1, nn2),
    }[location]


def loc_coords(grid, location):
    """Per-direction parameter coordinates (r1 array, r2 array)."""
    r1 = grid.nodes1 if location in ("edge1", "node") else grid.cells1
    r2 = grid.nodes2 if location in ("edge2", "node") else grid.cells2
    return r1, r2


@dataclass
class GridFunction:
    """A flat field tagged with its grid location."""

    location: str
    values: np.ndarray
    grid: StaggeredGrid2D

    def __post_init__(self):
        shape = loc_shape(self.grid, self.location)
        n = shape[0] * shape[1]
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != n:
            raise ValueError(
                f"{self.location} field needs {n} values, got {self.values.size}")

    def shaped(self):
        return self.values.reshape(loc_shape(self.grid, self.location))

    def copy(self):
        return GridFunction(self.location, self.values.copy(), self.grid)


def from_array(grid, location, arr):
    return GridFunction(location, np.asarray(arr, dtype=float).ravel(), grid)


@dataclass(frozen=True)
class Operator2D:
    """A Kronecker-product operator; ``A`` acts on direction 1 lines and
    ``B`` on direction 2 lines (None means identity)."""

    kind: str
    A: sp.csr_matrix | None
    B: sp.csr_matrix | None
    loc_in: str
    loc_out: str
    grid: StaggeredGrid2D


def make_operators(grid, ops1: OperatorSet1D, ops2: OperatorSet1D):
    """The ten tensor-product operators used by the scheme, keyed by kind."""
    if ops1.N != grid.n1 or ops2.N != grid.n2:
        raise ValueError("1-D operator sizes do not match grid")
    if ops1.periodic != grid.periodic1 or ops2.periodic != grid.periodic2:
        raise ValueError("1-D operator periodicity does not match grid")

    def op(kind, A, B, loc_in, loc_out):
        return Operator2D(kind, A, B, loc_in, loc_out, grid)

    return {
        "D1": op("D1", ops1.D, None, "cell", "edge1"),
        "D2": op("D2", None, ops2.D, "cell", "edge2"),
        "Dhat1": op("Dhat1", ops1.Dhat, None, "edge1", "cell"),
        "Dhat2": op("Dhat2", None, ops2.Dhat, "edge2", "cell"),
        "P1c": op("P1c", ops1.P, None, "cell", "edge1"),
        "Pc1": op("Pc1", ops1.Phat, None, "edge1", "cell"),
        "P2c": op("P2c", None, ops2.P, "cell", "edge2"),
        "Pc2": op("Pc2", None, ops2.Phat, "edge2", "cell"),
        "P12": op("P12", ops1.P, ops2.Phat, "edge2", "edge1"),
        "P21": op("P21", ops1.Phat, ops2.P, "edge1", "edge2"),
    }


def kron_apply(op, f):
    """Apply (A kron B) to a grid function by line sweeps."""
    if f.location != op.loc_in:
        raise ValueError(f"{op.kind} expects {op.loc_in}, got {f.location}")
    F = f.shaped()
    if op.A is not None:
        F = op.A @ F
    if op.B is not None:
        F = (op.B @ F.T).T
    return GridFunction(op.loc_out, np.ascontiguousarray(F).ravel(), op.grid)


def kron_apply_transpose(op, f):
    """Apply the transpose (A.T kron B.T), mapping loc_out back to loc_in."""
    if f.location != op.loc_out:
        raise ValueError(f"{op.kind}^T expects {op.loc_out}, got {f.location}")
    F = f.shaped()
    if op.A is not None:
        F = op.A.T @ F
    if op.B is not None:
        F = (op.B.T @ F.T).T
    return GridFunction(op.loc_in, np.ascontiguousarray(F).ravel(), op.grid)


def assemble_sparse(op):
    """Materialize the Kronecker product as a CSR matrix."""
    s_in = loc_shape(op.grid, op.loc_in)
    A = op.A if op.A is not None else sp.identity(s_in[0], format="csr")
    B = op.B if op.B is not None else sp.identity(s_in[1], format="csr")
    return sp.kron(A, B, format="csr")


@dataclass(frozen=True)
class NormWeights2D:
    """Diagonal quadrature weights on the three staggered locations,
    stored as 2-D arrays matching the field shapes."""

    h1: np.ndarray    # edge1: m (x) mhat
    h2: np.ndarray    # edge2: mhat (x) m
    hhat: np.ndarray  # cell:  mhat (x) mhat


def norm_weights(grid, ops1, ops2):
    return NormWeights2D(
        h1=np.outer(ops1.m, ops2.mhat),
        h2=np.outer(ops1.mhat, ops2.m),
        hhat=np.outer(ops1.mhat, ops2.mhat),
    )


def _side_index(grid, location, side):
    if side in ("L", "R"):
        axis = 0
    elif side in ("B", "T"):
        axis = 1
    else:
        raise ValueError(f"unknown side {side!r}")
    if axis == 0 and grid.periodic1 or axis == 1 and grid.periodic2:
        raise ValueError(f"side {side} is periodic; no boundary there")
    idx = 0 if side in ("L", "B") else -1
    return axis, idx


def boundary_restrict(f, side):
    """Extract the boundary grid line of ``f`` along one side."""
    axis, idx = _side_index(f.grid, f.location, side)
    F = f.shaped()
    return (F[idx, :] if axis == 0 else F[:, idx]).copy()


def boundary_lift(grid, location, side, w):
    """Scatter a boundary line into an otherwise zero grid function
    (the transpose of boundary_restrict)."""
    axis, idx = _side_index(grid, location, side)
    F = np.zeros(loc_shape(grid, location))
    w = np.asarray(w, dtype=float)
    if axis == 0:
        F[idx, :] = w
    else:
        F[:, idx] = w
    return GridFunction(location, F.ravel(), grid)


def save_field(path, f, time=0.0):
    """Dump a field as raw little-endian float64 plus a JSON sidecar."""
    path = str(path)
    f.values.astype("<f8").tofile(path)
    sidecar = {
        "location": f.location,
        "n1": f.grid.n1,
        "n2": f.grid.n2,
        "periodic1": f.grid.periodic1,
        "periodic2": f.grid.periodic2,
        "time": time,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_field(path):
    path = str(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    grid = make_grid2d(meta["n1"], meta["n2"],
                       periodic1=meta.get("periodic1", False),
                       periodic2=meta.get("periodic2", False))
    values = np.fromfile(path, dtype="<f8")
    return GridFunction(meta["location"], values, grid), meta["time"]
