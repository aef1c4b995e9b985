"""Construction of the staggered operator closures from first principles.

The interior stencils are fixed fourth-order formulas.  The boundary
closures (four rows each for the difference pair and the interpolation
pair) are found by solving the two summation-by-parts identities together
with row-wise accuracy conditions symbolically, in the variables Q = M C
where C is the closure and M the norm.  The norm weights themselves belong
to two one-parameter families; the difference system pins one combination
of them and leaves a handful of genuinely free coefficients.

The free coefficients are then fixed numerically by a derivative-free
search (Nelder-Mead with restarts from a seeded generator) under one of
three objectives:

  min_norm   boundary truncation residuals, with a penalty keeping
             the interpolation norm ||P Phat||_2 capped near one.  This
             is the pair the solver ships with; pushing the norm all the
             way to its true minimum trades away roughly an order of
             magnitude of boundary accuracy, so the cap is what makes the
             convergence tables attainable.
  accuracy   boundary truncation residuals alone.
  max_norm   drive ||P Phat||_2 toward a large target value, producing a
             deliberately de-optimized pair for stability experiments.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import sympy as sym
from scipy.optimize import minimize

from .sbp1d import CoefficientTable

__all__ = ["construct_operator_set", "free_parameter_count"]

_NORM_CAP = 1.09
_MAX_NORM_TARGET = 8.53
_WEIGHT_FLOOR = 0.05

# fourth-order interior stencils (difference on a staggered pair, and the
# matching interpolation), as exact rationals
_D_INT = {-1: sym.Rational(1, 24), 0: sym.Rational(-27, 24),
          1: sym.Rational(27, 24), 2: sym.Rational(-1, 24)}
_DH_INT = {-2: sym.Rational(1, 24), -1: sym.Rational(-27, 24),
           0: sym.Rational(27, 24), 1: sym.Rational(-1, 24)}
_P_INT = {-1: sym.Rational(-1, 16), 0: sym.Rational(9, 16),
          1: sym.Rational(9, 16), 2: sym.Rational(-1, 16)}
_PH_INT = {-2: sym.Rational(-1, 16), -1: sym.Rational(9, 16),
           0: sym.Rational(9, 16), 1: sym.Rational(-1, 16)}

_BR = 4          # closure rows on the node side
_BH = 4          # closure rows on the cell side
_WD = _BR + 2    # closure width, node-side rows (columns are cells)
_WDH = _BH + 1   # closure width, cell-side rows (columns are nodes)


def _xnode(i):
    return sym.Integer(i)


def _xcell(j):
    return sym.Integer(0) if j == 0 else sym.Rational(2 * j - 1, 2)


class _Families:
    """Symbolic solution of both closure systems, lambdified over the
    joint free parameters.  Built once, lazily."""

    def __init__(self):
        t_m, t_mh = sym.symbols("t_m t_mh")
        # one-parameter norm-weight families compatible with quadrature
        # exactness up to degree 3
        m = [-t_m + sym.Rational(3, 8), 3 * t_m + sym.Rational(7, 6),
             -3 * t_m + sym.Rational(23, 24), t_m + 1]
        mh = [-sym.Rational(8, 3) * t_mh + sym.Rational(1, 9),
              5 * t_mh + sym.Rational(7, 8),
              -sym.Rational(10, 3) * t_mh + sym.Rational(73, 72),
              t_mh + 1]
        self._t_m, self._t_mh, self._m, self._mh = t_m, t_mh, m, mh

        vecD, unkD, freeD = self._solve_pair(
            _D_INT, _DH_INT,
            lambda i, k: k * _xnode(i) ** (k - 1) if k else sym.Integer(0),
            lambda j, k: k * _xcell(j) ** (k - 1) if k else sym.Integer(0),
            kmax=2,
            corner=lambda i, j: sym.Integer(-1) if i == j == 0
            else sym.Integer(0),
            name="d", sign=1)
        vecP, unkP, freeP = self._solve_pair(
            _P_INT, _PH_INT,
            lambda i, k: _xnode(i) ** k, lambda j, k: _xcell(j) ** k,
            kmax=1, corner=lambda i, j: sym.Integer(0), name="p", sign=-1)

        # the difference system determines t_m in terms of t_mh; substitute
        # so both systems share one parameter vector
        tm_expr = vecD[unkD.index(t_m)]
        vecP = [sym.expand(v.subs({t_m: tm_expr})) for v in vecP]
        joint_p = [s for s in freeP if s not in (t_m, t_mh)]
        self.params = list(freeD) + joint_p
        self.n_free = len(self.params)
        self._fD = sym.lambdify(self.params, list(vecD), "numpy")
        self._fP = sym.lambdify(self.params, vecP, "numpy")
        self._fm = sym.lambdify(self.params,
                                [mi.subs({t_m: tm_expr}) for mi in m],
                                "numpy")
        self._fmh = sym.lambdify(self.params, mh, "numpy")

    def _solve_pair(self, row_int, hat_int, rowacc, hatacc, kmax, corner,
                    name, sign):
        m, mh = self._m, self._mh
        Q = sym.symbols(f"{name}q0:{_BR * _WD}")
        Qh = sym.symbols(f"{name}r0:{_BH * _WDH}")

        def mw(i):
            return m[i] if i < 4 else sym.Integer(1)

        def mhw(j):
            return mh[j] if j < 4 else sym.Integer(1)

        def Qv(i, j):
            if i < _BR:
                return Q[i * _WD + j] if j < _WD else sym.Integer(0)
            return mw(i) * row_int.get(j - i, sym.Integer(0))

        def Qhv(j, i):
            if j < _BH:
                return Qh[j * _WDH + i] if i < _WDH else sym.Integer(0)
            return mhw(j) * hat_int.get(i - j, sym.Integer(0))

        eqs = []
        for i in range(_BR):
            for k in range(kmax + 1):
                lhs = sum(Qv(i, j) * _xcell(j) ** k for j in range(_WD))
                eqs.append(sym.expand(lhs - mw(i) * rowacc(i, k)))
        for j in range(_BH):
            for k in range(kmax + 1):
                lhs = sum(Qhv(j, i) * _xnode(i) ** k for i in range(_WDH))
                eqs.append(sym.expand(lhs - mhw(j) * hatacc(j, k)))
        for i in range(_BR + 4):
            for j in range(_WD + 4):
                eqs.append(sym.expand(Qv(i, j) + sign * Qhv(j, i)
                                      - corner(i, j)))
        eqs = [e for e in eqs if e != 0]
        unk = list(Q) + list(Qh) + [self._t_m, self._t_mh]
        sol = sym.linsolve(eqs, unk)
        if sol == sym.EmptySet:
            raise RuntimeError(
                "closure constraint system is infeasible at the requested "
                "accuracy orders")
        (vec,) = sol
        free = sorted(set().union(*[v.free_symbols for v in vec]) & set(unk),
                      key=str)
        return list(vec), unk, free

    def closures(self, p):
        """Numeric closure rows and norm weights at parameter vector p."""
        valsD = np.array(self._fD(*p), dtype=float)
        valsP = np.array(self._fP(*p), dtype=float)
        mv = np.array(self._fm(*p), dtype=float)
        mhv = np.array(self._fmh(*p), dtype=float)
        nD = _BR * _WD
        Qd = valsD[:nD].reshape(_BR, _WD)
        Qdh = valsD[nD:nD + _BH * _WDH].reshape(_BH, _WDH)
        Qp = valsP[:nD].reshape(_BR, _WD)
        Qph = valsP[nD:nD + _BH * _WDH].reshape(_BH, _WDH)
        return (Qd / mv[:, None], Qdh / mhv[:, None],
                Qp / mv[:, None], Qph / mhv[:, None], mv, mhv)


_FAMILIES = None


def _families():
    global _FAMILIES
    if _FAMILIES is None:
        _FAMILIES = _Families()
    return _FAMILIES


def free_parameter_count():
    """Number of genuinely free closure coefficients after all constraints."""
    return _families().n_free


def _dense_pair(cp, cph, N):
    """Dense P and Phat at size N from interpolation closures (unit h)."""
    P = np.zeros((N + 1, N + 2))
    Ph = np.zeros((N + 2, N + 1))
    for i in range(N + 1):
        if i < _BR:
            P[i, :_WD] = cp[i]
        elif i > N - _BR:
            P[i, N + 2 - _WD:] = cp[N - i][::-1]
        else:
            for o, c in _P_INT.items():
                P[i, i + o] = float(c)
    for j in range(N + 2):
        if j < _BH:
            Ph[j, :_WDH] = cph[j]
        elif j > N + 1 - _BH:
            Ph[j, N + 1 - _WDH:] = cph[N + 1 - j][::-1]
        else:
            for o, c in _PH_INT.items():
                Ph[j, j + o] = float(c)
    return P, Ph


def _interp_norm(cp, cph, N=24):
    P, Ph = _dense_pair(cp, cph, N)
    return float(np.linalg.norm(P @ Ph, 2))


def _truncation_residuals(cd, cdh, cp, cph):
    """Leading boundary truncation constants: the first monomial degree
    each closure row is not exact on, evaluated in local coordinates."""
    xn = np.arange(_WDH, dtype=float)
    xc = np.array([_xcell(j) for j in range(_WD)], dtype=float)
    rD = cd @ xc ** 3 - 3.0 * np.arange(_BR) ** 2
    rDh = cdh @ xn ** 3 - 3.0 * np.array(
        [float(_xcell(j)) for j in range(_BH)]) ** 2
    rP = cp @ xc ** 2 - np.arange(_BR, dtype=float) ** 2
    rPh = cph @ xn ** 2 - np.array(
        [float(_xcell(j)) for j in range(_BH)]) ** 2
    return np.concatenate([rD, rDh, rP, rPh])


def _objective(fam, kind):
    def fun(p):
        try:
            cd, cdh, cp, cph, mv, mhv = fam.closures(p)
        except (ValueError, FloatingPointError):
            return 1e6
        if not np.all(np.isfinite(np.concatenate([mv, mhv]))):
            return 1e6
        if mv.min() <= _WEIGHT_FLOOR or mhv.min() <= _WEIGHT_FLOOR:
            return 1e6
        nrm = _interp_norm(cp, cph)
        if kind == "max_norm":
            return (nrm - _MAX_NORM_TARGET) ** 2
        acc = float(np.sum(_truncation_residuals(cd, cdh, cp, cph) ** 2))
        if kind == "accuracy":
            return acc
        return acc + 1e6 * max(0.0, nrm - _NORM_CAP) ** 2
    return fun


def construct_operator_set(boundary_order=2, objective="min_norm",
                           restarts=20, seed=0):
    """Build a coefficient table for the staggered fourth-order pair.

    Only boundary order 2 is supported by the symbolic constraint system.
    The search is deterministic for a fixed seed and restart count.
    """
    if boundary_order != 2:
        raise ValueError("only boundary order 2 closures are constructed")
    if objective not in ("min_norm", "max_norm", "accuracy"):
        raise ValueError(f"unknown objective {objective!r}")
    fam = _families()
    fun = _objective(fam, objective)
    rng = np.random.default_rng(seed)
    best = None
    for trial in range(restarts):
        x0 = np.zeros(fam.n_free) if trial == 0 else rng.normal(
            0.0, 0.5, fam.n_free)
        res = minimize(fun, x0, method="Nelder-Mead",
                       options=dict(maxiter=8000, xatol=1e-13, fatol=1e-16))
        res = minimize(fun, res.x, method="Nelder-Mead",
                       options=dict(maxiter=8000, xatol=1e-13, fatol=1e-16))
        if best is None or res.fun < best.fun:
            best = res
    cd, cdh, cp, cph, mv, mhv = fam.closures(best.x)
    nrm = _interp_norm(cp, cph)
    if objective == "min_norm" and nrm > 1.5:
        warnings.warn(
            f"interpolation norm {nrm:.4f} stayed above 1.5 under the "
            "min_norm objective", RuntimeWarning)

    def fmt(a):
        a = np.asarray(a)
        if a.ndim == 1:
            return ["%.17e" % v for v in a]
        return [["%.17e" % v for v in row] for row in a]

    data = dict(
        interior_d=fmt(np.array([1.0, -27.0, 27.0, -1.0]) / 24.0),
        interior_p=fmt(np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0),
        closure_d=fmt(cd), closure_dhat=fmt(cdh),
        closure_p=fmt(cp), closure_phat=fmt(cph),
        m_weights=fmt(mv), mhat_weights=fmt(mhv),
        boundary_order=2,
        provenance=(f"constructed 4/2 staggered pair, objective={objective}, "
                    f"|P Phat|_2 ~ {nrm:.6f}"),
    )
    return CoefficientTable.from_dict(data)
