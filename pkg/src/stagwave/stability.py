"""Positive-definiteness analysis of the kinetic matrix HJG.

With the modified metric-tensor discretization, definiteness of HJG is not
automatic.  It can be certified by splitting HJG into a part A(alpha, beta)
checked point-wise at cell centers and a remainder B(alpha, beta) that is
positive semi-definite whenever

    alpha <= 1 / max(lambda1),   beta <= 1 / max(lambda2),

where lambda1, lambda2 are the spectra of two generalized eigenvalue
problems that decouple into small symmetric problems along individual grid
lines.  The point-wise check then reduces to the smallest eigenvalue of a
2x2 matrix per cell center.  The certificate is one-sided: "definite"
implies definite, "inconclusive" decides nothing.

For validation at small sizes, the module can also assemble HJG and
compute its full spectrum with a cyclic Jacobi eigensolver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry, grid2d, metric as metric_ops, sbp1d

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

__all__ = [
    "StabilityReport",
    "symmetric_eigen",
    "line_eigen_bounds",
    "pointwise_definiteness",
    "direct_min_eigenvalue",
    "stability_report",
    "gamma_sweep",
    "critical_gamma",
]


@njit(cache=True)
def _jacobi_kernel(a, v, accumulate, tol_frob, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if math.sqrt(off) <= tol_frob:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[p, k] = a[k, p]
                    a[k, q] = s * akp + c * akq
                    a[q, k] = a[k, q]
                a[p, p] = c * c * app - 2.0 * s * c * apq + s * s * aqq
                a[q, q] = s * s * app + 2.0 * s * c * apq + c * c * aqq
                a[p, q] = 0.0
                a[q, p] = 0.0
                if accumulate:
                    for k in range(n):
                        vkp = v[k, p]
                        vkq = v[k, q]
                        v[k, p] = c * vkp - s * vkq
                        v[k, q] = s * vkp + c * vkq
    return -1


def symmetric_eigen(A, compute_vectors=False, tol=1e-12, max_sweeps=30):
    """Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi."""
    A = np.asarray(A, dtype=float)
    scale = np.linalg.norm(A)
    a = np.array(A, dtype=float, order="C")
    n = a.shape[0]
    v = np.eye(n) if compute_vectors else np.zeros((1, 1))
    sweeps = _jacobi_kernel(a, v, compute_vectors, tol * max(scale, 1e-300),
                            max_sweeps)
    if sweeps < 0:
        raise RuntimeError(
            f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    lam = np.diag(a).copy()
    order = np.argsort(lam)
    if compute_vectors:
        return lam[order], v[:, order]
    return lam[order]


@dataclass
class StabilityReport:
    """Outcome of the definiteness certificate (and optional direct check).

    The point-wise 2x2 matrices omit the positive scalar factor
    Hhat * Jhat at each cell center; it cannot change any sign.
    """

    alpha: float
    beta: float
    lam1: np.ndarray
    lam2: np.ndarray
    min_pointwise_eig: float
    verdict: str
    lambda_min_direct: float | None = None


def _line_problems(m_vec, mhat_vec, Phat, K_lines, Khat_lines):
    """Largest eigenvalue over all decoupled per-line problems.

    K_lines rows hold J*g along a nodal line, Khat_lines rows along the
    matching cell-centered line.  Each line yields the symmetric matrix
    M^(-1/2) K^(-1/2) Phat^T Mhat Khat Phat K^(-1/2) M^(-1/2).
    """
    Ph = Phat.toarray()
    lams = np.empty(K_lines.shape[0])
    for k in range(K_lines.shape[0]):
        d = 1.0 / np.sqrt(m_vec * K_lines[k])
        core = Ph.T @ (mhat_vec[:, None] * Khat_lines[k][:, None] * Ph)
        B = d[:, None] * core * d[None, :]
        # only the largest eigenvalue is needed here, and the certificate
        # runs once per solver construction; LAPACK keeps it cheap even
        # for long grid lines
        lams[k] = np.linalg.eigvalsh(0.5 * (B + B.T))[-1]
    return lams


def line_eigen_bounds(metric, ops1, ops2):
    """Bounds (alpha~, beta~) from the decoupled 1-D eigenproblems."""
    K1 = metric.edge1.J * metric.edge1.gu11     # (nodes1, cells2)
    Khat = metric.cell.J
    K1hat = Khat * metric.cell.gu11             # (cells1, cells2)
    K2 = metric.edge2.J * metric.edge2.gu22     # (cells1, nodes2)
    K2hat = Khat * metric.cell.gu22

    # direction-1 problems: one per cell line in direction 2
    lam1 = _line_problems(ops1.m, ops1.mhat, ops1.Phat,
                          K1.T, K1hat.T)
    # direction-2 problems: one per cell line in direction 1
    lam2 = _line_problems(ops2.m, ops2.mhat, ops2.Phat,
                          K2, K2hat)
    return 1.0 / lam1.max(), 1.0 / lam2.max(), lam1, lam2


def pointwise_definiteness(metric, alpha, beta):
    """Smallest eigenvalue over cell centers of the 2x2 core of A(alpha, beta)."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    a = alpha * metric.cell.gu11
    c = beta * metric.cell.gu22
    b = metric.cell.gu12
    min_eig = float((0.5 * (a + c - np.sqrt((a - c) ** 2 + 4.0 * b * b))).min())
    verdict = "definite" if min_eig > 0 else "inconclusive"
    return min_eig, verdict


def direct_min_eigenvalue(kin, asym_tol=1e-12):
    """Smallest eigenvalue of the assembled HJG (small grids only)."""
    S = metric_ops.assemble_HJG(kin).toarray()
    scale = np.abs(S).max()
    asym = np.abs(S - S.T).max()
    if asym > asym_tol * max(scale, 1e-300):
        raise RuntimeError(f"assembled HJG asymmetry {asym:.2e} exceeds "
                           f"tolerance; construction bug")
    S = 0.5 * (S + S.T)
    return float(symmetric_eigen(S)[0])


def stability_report(metric, ops1, ops2, kin=None, direct=False):
    alpha, beta, lam1, lam2 = line_eigen_bounds(metric, ops1, ops2)
    min_eig, verdict = pointwise_definiteness(metric, alpha, beta)
    lam_min = None
    if direct:
        if kin is None:
            raise ValueError("direct eigenvalue check needs the kinetic matrix")
        lam_min = direct_min_eigenvalue(kin)
    return StabilityReport(alpha=alpha, beta=beta, lam1=lam1, lam2=lam2,
                           min_pointwise_eig=min_eig, verdict=verdict,
                           lambda_min_direct=lam_min)


def _hill_setup(table, N, gamma):
    grid = grid2d.make_grid2d(N)
    ops1 = sbp1d.instantiate(table, N)
    ops2d = grid2d.make_operators(grid, ops1, ops1)
    weights = grid2d.norm_weights(grid, ops1, ops1)
    spec = geometry.MappingSpec("gaussian_hill", {"gamma": gamma})
    mf = geometry.build_metric_fields(spec, grid)
    gop = metric_ops.build_metric_tensor(mf, ops2d, "modified")
    kin = metric_ops.build_kinetic_matrix(gop, weights)
    return mf, ops1, kin


def gamma_sweep(gammas, tables, N=16, direct=True):
    """Definiteness of the modified tensor on a Gaussian-hill grid, for a
    range of hill amplitudes and one or more operator tables.

    ``tables`` maps a label to a CoefficientTable.  Returns a list of row
    dicts matching the CSV columns
    gamma, norm_PPhat, lambda_min_direct, lambda_min_bound, verdict.
    """
    rows = []
    for label, table in tables.items():
        ops = sbp1d.instantiate(table, N)
        pphat = sbp1d.interpolation_norm(ops)
        for gamma in gammas:
            mf, ops1, kin = _hill_setup(table, N, gamma)
            rep = stability_report(mf, ops1, ops1, kin=kin, direct=direct)
            rows.append({
                "pair": label,
                "gamma": float(gamma),
                "norm_PPhat": pphat,
                "lambda_min_direct": rep.lambda_min_direct,
                "lambda_min_bound": rep.min_pointwise_eig,
                "verdict": rep.verdict,
            })
    return rows


def critical_gamma(table, N=16, kind="direct", lo=1e-3, hi=8.0, steps=40):
    """Hill amplitude where the chosen indicator changes sign (bisection).

    kind='direct' tracks the smallest eigenvalue of HJG; kind='bound'
    tracks the point-wise certificate.  The indicator must be positive at
    ``lo`` and negative at ``hi``.
    """

    def indicator(gamma):
        mf, ops1, kin = _hill_setup(table, N, gamma)
        if kind == "direct":
            return direct_min_eigenvalue(kin)
        rep = stability_report(mf, ops1, ops1)
        return rep.min_pointwise_eig

    f_lo, f_hi = indicator(lo), indicator(hi)
    if f_lo <= 0 or f_hi >= 0:
        raise ValueError(f"no sign change in [{lo}, {hi}] "
                         f"(f({lo})={f_lo:.3e}, f({hi})={f_hi:.3e})")
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if indicator(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-4 * hi:
            break
    return 0.5 * (lo + hi)
