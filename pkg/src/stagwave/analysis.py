"""Energy diagnostics, manufactured solutions, and error measurement.

The discrete energy splits into an acoustic part (a plain weighted sum of
pressure squared) and a kinetic part that involves the inverse of the
metric tensor; the kinetic part is evaluated through a CG solve with the
symmetric kinetic matrix, never by forming an inverse.

The manufactured solution is a standing wave that satisfies the acoustic
system exactly on any grid, with homogeneous initial velocity.  Errors
are measured in uniformly weighted discrete l2 norms (weight h1*h2 per
point, not the SBP quadrature) and in max norms, summed over fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .grid2d import loc_coords
from .solver import BoundaryData, State

__all__ = [
    "EnergySample",
    "ErrorTable",
    "CharacteristicSlice",
    "energy",
    "energy_rate",
    "mms_pressure",
    "mms_velocity_xy",
    "mms_state",
    "mms_boundary_data",
    "error_norms",
    "convergence_table",
    "characteristic_errors",
    "symmetrizer_factor",
]

_OMEGA = 2.0 * math.sqrt(2.0) * math.pi


@dataclass(frozen=True)
class EnergySample:
    t: float
    E_a: float
    E_k: float

    @property
    def E(self):
        return self.E_a + self.E_k


def energy(state, kin, weights, tol=1e-12):
    """Discrete acoustic plus kinetic energy of a state."""
    mc = kin.gop.metric.cell
    E_a = 0.5 * float(np.sum(weights.hhat * mc.J * state.p ** 2))
    b1 = kin.hj1 * state.v1
    b2 = kin.hj2 * state.v2
    z1, z2 = kin.solve_HJG(b1, b2, tol=tol)
    E_k = 0.5 * float(np.sum(b1 * z1) + np.sum(b2 * z2))
    return EnergySample(t=state.t, E_a=E_a, E_k=E_k)


def energy_rate(state, rate, kin, weights):
    """Time derivative of the discrete energy at a state.

    When the rate carries the pre-tensor forcing q (dv = G q), the kinetic
    term reduces algebraically to q^T H J v and no solve is needed; this
    also stays exact when the tensor has a null space.  Otherwise a CG
    solve against the kinetic matrix is used.
    """
    mc = kin.gop.metric.cell
    acoustic = float(np.sum(state.p * weights.hhat * mc.J * rate.dp))
    if rate.q1 is not None:
        kinetic = float(np.sum(rate.q1 * kin.hj1 * state.v1)
                        + np.sum(rate.q2 * kin.hj2 * state.v2))
    else:
        z1, z2 = kin.solve_HJG(kin.hj1 * rate.dv1, kin.hj2 * rate.dv2)
        kinetic = float(np.sum(z1 * kin.hj1 * state.v1)
                        + np.sum(z2 * kin.hj2 * state.v2))
    return acoustic + kinetic


def mms_pressure(x, y, t, order=0):
    """Manufactured pressure and its time derivatives."""
    s = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    phase = (math.cos, lambda z: -math.sin(z),
             lambda z: -math.cos(z), math.sin)[order % 4]
    return s * _OMEGA ** order * phase(_OMEGA * t)


def mms_velocity_xy(x, y, t):
    """Cartesian components of the manufactured velocity field."""
    amp = -math.sin(_OMEGA * t) / math.sqrt(2.0)
    vx = amp * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
    vy = amp * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    return vx, vy


def _loc_xy(spec, grid, location):
    r1, r2 = loc_coords(grid, location)
    R1, R2 = np.meshgrid(r1, r2, indexing="ij")
    return geometry.evaluate_mapping(spec, R1, R2)


def mms_state(spec, grid, metric, t, formulation="covariant"):
    """Exact State at time t; velocity projected onto the basis the
    formulation evolves, using the transform entries of ``metric`` so the
    comparison is consistent with the scheme's own metric discretization."""
    xc, yc = _loc_xy(spec, grid, "cell")
    x1, y1 = _loc_xy(spec, grid, "edge1")
    x2, y2 = _loc_xy(spec, grid, "edge2")
    p = mms_pressure(xc, yc, t)
    vx1, vy1 = mms_velocity_xy(x1, y1, t)
    vx2, vy2 = mms_velocity_xy(x2, y2, t)
    if formulation == "cartesian":
        return State(p=p, v1=vx1, v2=vy2, t=t)
    me1, me2 = metric.edge1, metric.edge2
    v1 = vx1 * me1.A11 + vy1 * me1.A21
    v2 = vx2 * me2.A12 + vy2 * me2.A22
    return State(p=p, v1=v1, v2=v2, t=t)


def mms_boundary_data():
    """Pressure Dirichlet data matching the manufactured solution."""

    def func(side, x, y, t, order):
        return mms_pressure(x, y, t, order)

    return BoundaryData(func)


def error_norms(state, exact, grid):
    """Per-field and summed (l2, linf) errors with uniform h1*h2 weights."""
    w = grid.h1 * grid.h2
    out = {}
    for name in ("p", "v1", "v2"):
        d = getattr(state, name) - getattr(exact, name)
        out[name] = (math.sqrt(w * float(np.sum(d * d))),
                     float(np.abs(d).max()))
    out["sum"] = (sum(out[f][0] for f in ("p", "v1", "v2")),
                  sum(out[f][1] for f in ("p", "v1", "v2")))
    return out


@dataclass
class ErrorTable:
    """Rows of errors at nested resolutions with log2 convergence rates."""

    columns: list
    rows: list = field(default_factory=list)

    def to_csv(self):
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(
                "" if row.get(c) is None else
                (f"{row[c]:.6e}" if isinstance(row[c], float) else str(row[c]))
                for c in self.columns))
        return "\n".join(lines) + "\n"


def convergence_table(runs, error_keys=("err_l2", "err_inf")):
    """Attach rates q = log2(err_coarse / err_fine) to nested-level runs.

    ``runs`` is a list of dicts each containing "N" plus the error keys.
    """
    runs = sorted(runs, key=lambda r: r["N"])
    for prev, cur in zip(runs, runs[1:]):
        if cur["N"] != 2 * prev["N"]:
            raise ValueError("resolutions must be nested by factors of 2")
    columns = ["N"]
    for k in error_keys:
        columns += [k, "q_" + k]
    rows = []
    for i, r in enumerate(runs):
        row = {"N": r["N"]}
        for k in error_keys:
            row[k] = r[k]
            row["q_" + k] = (None if i == 0 or not runs[i - 1][k] else
                             math.log2(runs[i - 1][k] / r[k]))
        rows.append(row)
    return ErrorTable(columns=columns, rows=rows)


@dataclass
class CharacteristicSlice:
    """Characteristic variables and boundary-region errors on the
    cross-section at r1 = 0.5 extending from the bottom boundary."""

    w_plus: np.ndarray
    w_minus: np.ndarray
    w_zero: np.ndarray
    err_c: tuple      # (l2, linf) of the boundary-characteristic field v1
    err_nc: tuple     # (l2, linf) of v2 and p combined


def characteristic_errors(state, exact, metric, grid, ops2, n_points=4):
    """Errors near the bottom boundary split by characteristic type.

    The error in v1 only enters the zero-speed boundary characteristic;
    v2 and p carry the propagating characteristics.  Errors are measured
    on the first ``n_points`` boundary-modified points of the slice with
    uniform h1*h2 point weights.
    """
    i_node = int(np.argmin(np.abs(grid.nodes1 - 0.5)))
    i_cell = int(np.argmin(np.abs(grid.cells1 - 0.5)))
    w = grid.h1 * grid.h2

    def l2(d):
        return math.sqrt(w * float(np.sum(d * d)))

    dv1 = (state.v1 - exact.v1)[i_node, :n_points]
    dv2 = (state.v2 - exact.v2)[i_cell, :n_points]
    dp = (state.p - exact.p)[i_cell, :n_points]
    err_c = (l2(dv1), float(np.abs(dv1).max()))
    err_nc = (l2(dv2) + l2(dp),
              float(np.abs(dv2).max()) + float(np.abs(dp).max()))

    # co-locate v2 at cell centers along the slice, then form the in/out
    # characteristic variables from the covariant metric there
    v2c = (ops2.Phat @ state.v2[i_cell, :])
    mc = metric.cell
    sl = (i_cell, slice(0, n_points))
    J = mc.J[sl]
    g11 = mc.g11[sl]
    g12 = mc.g12[sl]
    g22 = mc.g22[sl]
    eta = np.sqrt(g11 * g22 - g12 * g12)
    denom = np.sqrt(2.0 * J * g11)
    p = state.p[sl]
    w_plus = (J * np.sqrt(g11) * p + eta * v2c[:n_points]) / denom
    w_minus = (-J * np.sqrt(g11) * p + eta * v2c[:n_points]) / denom
    # boundary characteristic from v1 on the nodal slice line
    me1 = metric.edge1
    sl1 = (i_node, slice(0, n_points))
    v1 = state.v1[sl1]
    # v2 interpolated onto the same points for the g12 coupling
    w_zero = (me1.g11[sl1] * v1 + me1.g12[sl1] * v2c[:n_points]) / np.sqrt(
        2.0 * me1.J[sl1] * me1.g11[sl1])
    return CharacteristicSlice(w_plus=w_plus, w_minus=w_minus, w_zero=w_zero,
                               err_c=err_c, err_nc=err_nc)


def symmetrizer_factor(g11, g12, g22, J):
    """Cholesky factor F of the symmetrizer W and W itself (3x3 blocks).

    W weighs (p, v1, v2) in the continuous energy; F is lower triangular
    with W = F F^T, which is what diagonalizing the boundary-normal flux
    rests on.
    """
    eta = np.sqrt(g11 * g22 - g12 * g12)
    s = 1.0 / np.sqrt(J * g11)
    F = np.array([
        [J * np.sqrt(g11) * s, 0.0, 0.0],
        [0.0, g11 * s, 0.0],
        [0.0, g12 * s, eta * s],
    ])
    W = np.array([
        [J, 0.0, 0.0],
        [0.0, g11 / J, g12 / J],
        [0.0, g12 / J, g22 / J],
    ])
    return F, W
