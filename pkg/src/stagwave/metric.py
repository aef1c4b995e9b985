"""Discrete contravariant metric tensor and the symmetric kinetic matrix.

Two discretizations of the 2x2 contravariant tensor acting on the paired
velocity field (w1 on edge-1, w2 on edge-2) are provided:

  unconditional: every block interpolates to cell centers, multiplies by
      the cell-centered J g^kl, and interpolates back.  The induced
      kinetic matrix HJG is symmetric positive definite for any
      non-singular mapping.

  modified: the diagonal blocks use the metric sampled directly on the
      velocity grids (no interpolation round trip), which is more
      accurate but only conditionally definite; the off-diagonal blocks
      are unchanged.

G itself is never inverted.  All uses of its inverse go through conjugate
gradients on the symmetric product HJG.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .grid2d import assemble_sparse, loc_shape


def _apply_dir2(B, F):
    """Apply a 1-D operator along the second axis of a 2-D array.

    The explicit contiguous copy of the transpose is faster than letting
    the sparse product work on a strided view.
    """
    return (B @ np.ascontiguousarray(F.T)).T

__all__ = [
    "MetricTensorOp",
    "KineticMatrix",
    "build_metric_tensor",
    "build_kinetic_matrix",
    "conjugate_gradient",
    "assemble_HJG",
]


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricTensorOp:
    """Matrix-free application of the discrete contravariant tensor."""

    variant: str
    metric: object        # MetricFields
    ops2d: dict
    grid: object

    @cached_property
    def _inv_j1(self):
        return 1.0 / self.metric.edge1.J

    @cached_property
    def _inv_j2(self):
        return 1.0 / self.metric.edge2.J

    @cached_property
    def _jg12(self):
        return self.metric.cell.J * self.metric.cell.gu12

    def apply(self, w1, w2):
        """Map paired edge fields (2-D arrays) through G."""
        mc, me1, me2 = self.metric.cell, self.metric.edge1, self.metric.edge2
        P1c, Pc1 = self.ops2d["P1c"].A, self.ops2d["Pc1"].A
        P2c, Pc2 = self.ops2d["P2c"].B, self.ops2d["Pc2"].B
        t2 = _apply_dir2(Pc2, w2)                 # w2 at cell centers
        if self.variant == "unconditional":
            t1 = Pc1 @ w1
            q1 = mc.J * (mc.gu11 * t1 + mc.gu12 * t2)
            q2 = mc.J * (mc.gu12 * t1 + mc.gu22 * t2)
            out1 = (P1c @ q1) * self._inv_j1
            out2 = _apply_dir2(P2c, q2) * self._inv_j2
            return out1, out2
        if self.variant == "modified":
            t1 = Pc1 @ w1
            out1 = me1.gu11 * w1 + (P1c @ (self._jg12 * t2)) * self._inv_j1
            out2 = me2.gu22 * w2 + _apply_dir2(
                P2c, self._jg12 * t1) * self._inv_j2
            return out1, out2
        raise ValueError(f"unknown variant {self.variant!r}")


def build_metric_tensor(metric, ops2d, variant):
    if variant not in ("unconditional", "modified"):
        raise ValueError(f"unknown variant {variant!r}")
    return MetricTensorOp(variant=variant, metric=metric, ops2d=ops2d,
                          grid=ops2d["P1c"].grid)


@dataclass(frozen=True)
class KineticMatrix:
    """The symmetric product HJG and its CG-based inverse application."""

    gop: MetricTensorOp
    hj1: np.ndarray   # H1 weights times J at edge-1 points
    hj2: np.ndarray

    def apply_HJG(self, w1, w2):
        g1, g2 = self.gop.apply(w1, w2)
        return self.hj1 * g1, self.hj2 * g2

    def pack(self, w1, w2):
        return np.concatenate([w1.ravel(), w2.ravel()])

    def unpack(self, x):
        s1 = loc_shape(self.gop.grid, "edge1")
        s2 = loc_shape(self.gop.grid, "edge2")
        n1 = s1[0] * s1[1]
        return x[:n1].reshape(s1), x[n1:].reshape(s2)

    def solve_HJG(self, rhs1, rhs2, tol=1e-12, precondition=False):
        """CG solve of HJG z = rhs; returns z as a paired field."""
        b = self.pack(rhs1, rhs2)

        def apply_A(x):
            w1, w2 = self.unpack(x)
            return self.pack(*self.apply_HJG(w1, w2))

        M = None
        if precondition:
            M = 1.0 / self.pack(
                self.hj1 * np.maximum(self.gop.metric.edge1.gu11, 1e-300),
                self.hj2 * np.maximum(self.gop.metric.edge2.gu22, 1e-300))
        z = conjugate_gradient(apply_A, b, tol=tol, diag_precond=M)
        return self.unpack(z)


def build_kinetic_matrix(gop, weights):
    """Pair a metric tensor op with the H J diagonal blocks."""
    return KineticMatrix(gop=gop,
                         hj1=weights.h1 * gop.metric.edge1.J,
                         hj2=weights.h2 * gop.metric.edge2.J)


def conjugate_gradient(apply_A, b, tol=1e-12, maxiter=None, diag_precond=None):
    """Unpreconditioned (or diagonally preconditioned) CG for SPD systems.

    Raises ConvergenceError after 10 n iterations; for an SPD system that
    many iterations signals indefiniteness or severe ill-conditioning.
    """
    n = b.size
    if maxiter is None:
        maxiter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b)
    r = b.copy()
    z = r * diag_precond if diag_precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise ConvergenceError(
                "CG encountered non-positive curvature; matrix is not "
                "positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = r * diag_precond if diag_precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) <= tol * bnorm:
        return x
    raise ConvergenceError(
        f"CG did not reach tolerance {tol} in {maxiter} iterations; "
        "indefiniteness suspected")


def assemble_HJG(kin):
    """Materialize HJG as a sparse matrix (for eigenvalue studies only)."""
    gop = kin.gop
    mc = gop.metric.cell
    me1, me2 = gop.metric.edge1, gop.metric.edge2
    P1c = assemble_sparse(gop.ops2d["P1c"])
    Pc1 = assemble_sparse(gop.ops2d["Pc1"])
    P2c = assemble_sparse(gop.ops2d["P2c"])
    Pc2 = assemble_sparse(gop.ops2d["Pc2"])
    H1 = sp.diags(kin.hj1.ravel() / me1.J.ravel())   # bare H1 weights
    H2 = sp.diags(kin.hj2.ravel() / me2.J.ravel())
    Jg11 = sp.diags((mc.J * mc.gu11).ravel())
    Jg12 = sp.diags((mc.J * mc.gu12).ravel())
    Jg22 = sp.diags((mc.J * mc.gu22).ravel())
    B12 = H1 @ P1c @ Jg12 @ Pc2
    B21 = H2 @ P2c @ Jg12 @ Pc1
    if gop.variant == "unconditional":
        B11 = H1 @ P1c @ Jg11 @ Pc1
        B22 = H2 @ P2c @ Jg22 @ Pc2
    else:
        B11 = sp.diags((kin.hj1 * me1.gu11).ravel())
        B22 = sp.diags((kin.hj2 * me2.gu22).ravel())
    return sp.bmat([[B11, B12], [B21, B22]], format="csr")
