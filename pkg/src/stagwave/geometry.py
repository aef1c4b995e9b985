"""Curvilinear coordinate mappings and metric-tensor sampling.

A mapping takes parameter coordinates (r1, r2) in the unit square to
physical coordinates (x, y).  Every built-in family provides analytic
partial derivatives, so the covariant basis

    a_1 = (dx/dr1, dy/dr1),   a_2 = (dx/dr2, dy/dr2)

and the Jacobian J = a_1 x a_2 are available in closed form.  The basis
can alternatively be computed discretely, by differentiating sampled
coordinates with the staggered SBP operators; that is what the wave
solver's production configurations use, so that the discrete metric sees
exactly the same truncation errors as the fields.

``build_metric_fields`` samples everything the solver needs at the cell,
edge-1, and edge-2 locations: the covariant and contravariant tensors, the
Jacobian, and the Cartesian transform entries A_ij = e_i . a^j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid2d
from .grid2d import GridFunction, kron_apply, loc_coords, loc_shape

__all__ = [
    "MappingSpec",
    "MetricSamples",
    "MetricFields",
    "evaluate_mapping",
    "mapping_partials",
    "covariant_basis",
    "build_metric_fields",
]

KINDS = ("identity", "rotation", "tfi", "gaussian_hill", "gaussian_top",
         "annulus")

_DEFAULTS = {
    "identity": {},
    "rotation": {"theta": 0.0},
    "tfi": {"a": 0.05, "k": 2.0 * math.pi, "x0": 0.2, "y0": 0.2},
    "gaussian_hill": {"gamma": 0.5},
    "gaussian_top": {"sigma": 0.105, "width": 10.0, "height": 5.0},
    "annulus": {"R0": 0.3, "R1": 1.0, "a": 4.0 * math.pi / 48.0,
                "phi": 0.2 * math.pi},
}


@dataclass(frozen=True)
class MappingSpec:
    """A mapping family plus parameters and an optional rigid post-rotation."""

    kind: str
    params: dict = field(default_factory=dict)
    rotate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown mapping kind {self.kind!r}")
        merged = dict(_DEFAULTS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)

    def rotated(self, theta):
        return MappingSpec(self.kind, dict(self.params), self.rotate + theta)

    def to_json(self):
        return json.dumps({"kind": self.kind, "params": self.params,
                           "rotate": self.rotate})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["kind"], d.get("params", {}), d.get("rotate", 0.0))


def _tfi_curves(p):
    """Boundary curves of the perturbed-square mapping and their derivatives.

    Left/right sides bow outward sinusoidally in x; bottom/top in y.  The
    perturbation vanishes at the corners for the default wavenumber.
    """
    a, k, x0, y0 = p["a"], p["k"], p["x0"], p["y0"]

    def left(s):
        return x0 - a * np.sin(k * s), y0 + s

    def right(s):
        return x0 + 1.0 + a * np.sin(k * s), y0 + s

    def bottom(s):
        return x0 + s, y0 - a * np.sin(k * s)

    def top(s):
        return x0 + s, y0 + 1.0 + a * np.sin(k * s)

    def dleft(s):
        return -a * k * np.cos(k * s), np.ones_like(s)

    def dright(s):
        return a * k * np.cos(k * s), np.ones_like(s)

    def dbottom(s):
        return np.ones_like(s), -a * k * np.cos(k * s)

    def dtop(s):
        return np.ones_like(s), a * k * np.cos(k * s)

    return (left, right, bottom, top), (dleft, dright, dbottom, dtop)


def _eval_raw(kind, p, r1, r2):
    """(x, y) before the optional post-rotation."""
    if kind == "identity":
        return r1 + 0.0 * r2, r2 + 0.0 * r1
    if kind == "rotation":
        c, s = math.cos(p["theta"]), math.sin(p["theta"])
        return c * r1 - s * r2, s * r1 + c * r2
    if kind == "gaussian_hill":
        bump = np.exp(-50.0 * (r1 - 0.5) ** 2)
        return r1 + 0.0 * r2, r2 * (1.0 + p["gamma"] * bump)
    if kind == "gaussian_top":
        ytop = p["height"] + np.exp(-((r1 - 0.5) ** 2) / p["sigma"] ** 2)
        return p["width"] * r1 + 0.0 * r2, r2 * ytop
    if kind == "annulus":
        xi = (p["R1"] - p["R0"]) * r1 * (p["a"] * r1 + 1.0 - p["a"]) + p["R0"]
        ang = p["phi"] + 2.0 * math.pi * r2
        return xi * np.cos(ang), xi * np.sin(ang)
    if kind == "tfi":
        (cl, cr, cb, ct), _ = _tfi_curves(p)
        xl, yl = cl(r2)
        xr, yr = cr(r2)
        xb, yb = cb(r1)
        xt, yt = ct(r1)
        c00 = cl(np.zeros(1))
        c01 = cl(np.ones(1))
        c10 = cr(np.zeros(1))
        c11 = cr(np.ones(1))
        out = []
        for f_l, f_r, f_b, f_t, k00, k01, k10, k11 in (
                (xl, xr, xb, xt, c00[0], c01[0], c10[0], c11[0]),
                (yl, yr, yb, yt, c00[1], c01[1], c10[1], c11[1])):
            blend = ((1 - r1) * f_l + r1 * f_r + (1 - r2) * f_b + r2 * f_t
                     - (1 - r1) * (1 - r2) * k00 - (1 - r1) * r2 * k01
                     - r1 * (1 - r2) * k10 - r1 * r2 * k11)
            out.append(blend)
        return out[0], out[1]
    raise ValueError(kind)


def _partials_raw(kind, p, r1, r2):
    """(dx/dr1, dy/dr1, dx/dr2, dy/dr2) before the post-rotation."""
    one = np.ones(np.broadcast(r1, r2).shape)
    zero = np.zeros_like(one)
    if kind == "identity":
        return one, zero, zero, one
    if kind == "rotation":
        c, s = math.cos(p["theta"]), math.sin(p["theta"])
        return c * one, s * one, -s * one, c * one
    if kind == "gaussian_hill":
        bump = np.exp(-50.0 * (r1 - 0.5) ** 2)
        dbump = -100.0 * (r1 - 0.5) * bump
        return one, (r2 + zero) * p["gamma"] * dbump, zero, \
            one * (1.0 + p["gamma"] * bump)
    if kind == "gaussian_top":
        e = np.exp(-((r1 - 0.5) ** 2) / p["sigma"] ** 2)
        dytop = e * (-2.0 * (r1 - 0.5) / p["sigma"] ** 2)
        ytop = p["height"] + e
        return p["width"] * one, (r2 + zero) * dytop, zero, ytop + zero
    if kind == "annulus":
        dR = p["R1"] - p["R0"]
        xi = dR * r1 * (p["a"] * r1 + 1.0 - p["a"]) + p["R0"]
        dxi = dR * (2.0 * p["a"] * r1 + 1.0 - p["a"])
        ang = p["phi"] + 2.0 * math.pi * r2
        cos, sin = np.cos(ang), np.sin(ang)
        return (dxi * cos + zero, dxi * sin + zero,
                -2.0 * math.pi * xi * sin + zero,
                2.0 * math.pi * xi * cos + zero)
    if kind == "tfi":
        (cl, cr, cb, ct), (dl, dr_, db, dt) = _tfi_curves(p)
        xl, yl = cl(r2)
        xr, yr = cr(r2)
        dxl, dyl = dl(r2)
        dxr, dyr = dr_(r2)
        dxb, dyb = db(r1)
        dxt, dyt = dt(r1)
        xb, yb = cb(r1)
        xt, yt = ct(r1)
        c00 = cl(np.zeros(1))
        c01 = cl(np.ones(1))
        c10 = cr(np.zeros(1))
        c11 = cr(np.ones(1))
        outs = []
        for f_l, f_r, df_l, df_r, f_b, f_t, df_b, df_t, k00, k01, k10, k11 in (
                (xl, xr, dxl, dxr, xb, xt, dxb, dxt,
                 c00[0], c01[0], c10[0], c11[0]),
                (yl, yr, dyl, dyr, yb, yt, dyb, dyt,
                 c00[1], c01[1], c10[1], c11[1])):
            d1 = (-f_l + f_r + (1 - r2) * df_b + r2 * df_t
                  + (1 - r2) * k00 + r2 * k01 - (1 - r2) * k10 - r2 * k11)
            d2 = ((1 - r1) * df_l + r1 * df_r - f_b + f_t
                  + (1 - r1) * k00 - (1 - r1) * k01 + r1 * k10 - r1 * k11)
            outs.append((d1 + zero, d2 + zero))
        (x1, x2), (y1, y2) = outs
        return x1, y1, x2, y2
    raise ValueError(kind)


def evaluate_mapping(spec, r1, r2):
    """Physical coordinates (x, y) of parameter points (r1, r2)."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    x, y = _eval_raw(spec.kind, spec.params, r1, r2)
    if spec.rotate:
        c, s = math.cos(spec.rotate), math.sin(spec.rotate)
        x, y = c * x - s * y, s * x + c * y
    return x, y


def mapping_partials(spec, r1, r2):
    """Analytic (dx/dr1, dy/dr1, dx/dr2, dy/dr2)."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    x1, y1, x2, y2 = _partials_raw(spec.kind, spec.params, r1, r2)
    if spec.rotate:
        c, s = math.cos(spec.rotate), math.sin(spec.rotate)
        x1, y1 = c * x1 - s * y1, s * x1 + c * y1
        x2, y2 = c * x2 - s * y2, s * x2 + c * y2
    return x1, y1, x2, y2


def covariant_basis(spec, r1, r2):
    """Analytic covariant basis vectors and Jacobian at (r1, r2)."""
    x1, y1, x2, y2 = mapping_partials(spec, r1, r2)
    J = x1 * y2 - y1 * x2
    if np.any(J <= 0):
        bad = np.unravel_index(int(np.argmin(J)), np.shape(J))
        raise ValueError(f"singular mapping: J <= 0 at sample index {bad}")
    return (x1, y1), (x2, y2), J


@dataclass(frozen=True)
class MetricSamples:
    """Metric quantities sampled at one grid location (2-D arrays)."""

    a1x: np.ndarray
    a1y: np.ndarray
    a2x: np.ndarray
    a2y: np.ndarray
    J: np.ndarray
    g11: np.ndarray   # covariant tensor
    g12: np.ndarray
    g22: np.ndarray
    gu11: np.ndarray  # contravariant tensor
    gu12: np.ndarray
    gu22: np.ndarray
    A11: np.ndarray   # Cartesian transform e_i . a^j
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray


@dataclass(frozen=True)
class MetricFields:
    """Metric samples at the three staggered locations used by the scheme."""

    cell: MetricSamples
    edge1: MetricSamples
    edge2: MetricSamples
    spec: MappingSpec
    method: str


def _samples_from_partials(x1, y1, x2, y2, location):
    J = x1 * y2 - y1 * x2
    if np.any(J <= 0):
        bad = np.unravel_index(int(np.argmin(J)), J.shape)
        raise ValueError(
            f"singular mapping: J <= 0 at {location} index {bad}")
    g11 = x1 * x1 + y1 * y1
    g12 = x1 * x2 + y1 * y2
    g22 = x2 * x2 + y2 * y2
    det = g11 * g22 - g12 * g12
    if np.any(det <= 0):
        bad = np.unravel_index(int(np.argmin(det)), det.shape)
        raise ValueError(
            f"metric tensor not positive definite at {location} index {bad}")
    return MetricSamples(
        a1x=x1, a1y=y1, a2x=x2, a2y=y2, J=J,
        g11=g11, g12=g12, g22=g22,
        gu11=g22 / det, gu12=-g12 / det, gu22=g11 / det,
        A11=y2 / J, A21=-x2 / J, A12=-y1 / J, A22=x1 / J,
    )


def _analytic_location(spec, grid, location):
    r1, r2 = loc_coords(grid, location)
    R1, R2 = np.meshgrid(r1, r2, indexing="ij")
    x1, y1, x2, y2 = mapping_partials(spec, R1, R2)
    return _samples_from_partials(x1, y1, x2, y2, location)


def _sample_xy(spec, grid, location):
    r1, r2 = loc_coords(grid, location)
    R1, R2 = np.meshgrid(r1, r2, indexing="ij")
    return evaluate_mapping(spec, R1, R2)


def _period_shifts(spec, grid):
    """Linear part of the mapping to subtract before SBP differencing.

    Returns ((s1x, s1y), (s2x, s2y)) so that the field (x, y) minus
    (s1 r1 + s2 r2) can be differenced in every direction: in a bounded
    direction the rows are degree-1 exact so any linear part is handled
    exactly and the identity coefficients are used; in a periodic direction
    the remainder must be periodic, so the coefficient is the measured
    shift of the mapping over one period (0 for a closed direction such as
    the angular coordinate of an annulus, 1 per unit translation)."""
    probes = np.array([0.15, 0.4, 0.65])
    shifts = []
    for k, periodic in ((0, grid.periodic1), (1, grid.periodic2)):
        if not periodic:
            shifts.append((1.0, 0.0) if k == 0 else (0.0, 1.0))
            continue
        r = np.meshgrid(probes, probes, indexing="ij")
        rs = [r[0].copy(), r[1].copy()]
        rs[k] += 1.0
        x0, y0 = evaluate_mapping(spec, r[0], r[1])
        x1, y1 = evaluate_mapping(spec, rs[0], rs[1])
        dx, dy = x1 - x0, y1 - y0
        if np.ptp(dx) > 1e-12 or np.ptp(dy) > 1e-12:
            raise ValueError(
                f"mapping is not compatible with a periodic direction "
                f"{k + 1}: the shift over one period is not constant")
        shifts.append((float(dx.flat[0]), float(dy.flat[0])))
    return shifts


def _displacement_xy(spec, grid, location, shifts):
    r1, r2 = loc_coords(grid, location)
    R1, R2 = np.meshgrid(r1, r2, indexing="ij")
    x, y = evaluate_mapping(spec, R1, R2)
    (s1x, s1y), (s2x, s2y) = shifts
    return x - s1x * R1 - s2x * R2, y - s1y * R1 - s2y * R2


def _sbp_partials(spec, grid, ops2d):
    """Covariant basis at all three locations by SBP differentiation of the
    sampled coordinate displacements, using the same operators as the
    scheme.  The subtracted linear part (see ``_period_shifts``) keeps the
    differencing valid on periodic grids and is added back analytically."""
    shifts = _period_shifts(spec, grid)
    (s1x, s1y), (s2x, s2y) = shifts
    Uc, Vc = _displacement_xy(spec, grid, "cell", shifts)
    Un, Vn = _displacement_xy(spec, grid, "node", shifts)
    Ue1, Ve1 = _displacement_xy(spec, grid, "edge1", shifts)
    Ue2, Ve2 = _displacement_xy(spec, grid, "edge2", shifts)

    def ap(kind, arr, loc_in):
        gf = GridFunction(loc_in, np.asarray(arr).ravel(), grid)
        return kron_apply(ops2d[kind], gf).shaped()

    # node-located 1-D operators reused through Operator2D factors: the
    # dir-1 derivative of node data lands on cells in dir 1, which is what
    # the edge-2 location needs, and vice versa.
    ops1_dhat = ops2d["Dhat1"].A
    ops2_dhat = ops2d["Dhat2"].B

    out = {}
    # edge1: d/dr1 of cell data; d/dr2 of node data (nodes -> cells in dir 2)
    out["edge1"] = (
        ap("D1", Uc, "cell") + s1x, ap("D1", Vc, "cell") + s1y,
        (ops2_dhat @ Un.T).T + s2x, (ops2_dhat @ Vn.T).T + s2y,
    )
    # edge2: d/dr1 of node data; d/dr2 of cell data
    out["edge2"] = (
        ops1_dhat @ Un + s1x, ops1_dhat @ Vn + s1y,
        ap("D2", Uc, "cell") + s2x, ap("D2", Vc, "cell") + s2y,
    )
    # cell: d/dr1 of edge1 data; d/dr2 of edge2 data
    out["cell"] = (
        ap("Dhat1", Ue1, "edge1") + s1x, ap("Dhat1", Ve1, "edge1") + s1y,
        ap("Dhat2", Ue2, "edge2") + s2x, ap("Dhat2", Ve2, "edge2") + s2y,
    )
    return out


def build_metric_fields(spec, grid, ops2d=None, method="analytic"):
    """Sample J, g_ij, g^ij, and A entries at cell/edge1/edge2 locations.

    method='analytic' uses exact derivatives; method='sbp' differentiates
    the sampled coordinates with the staggered operators (requires ops2d).
    """
    if method == "analytic":
        return MetricFields(
            cell=_analytic_location(spec, grid, "cell"),
            edge1=_analytic_location(spec, grid, "edge1"),
            edge2=_analytic_location(spec, grid, "edge2"),
            spec=spec, method=method)
    if method != "sbp":
        raise ValueError(f"unknown metric method {method!r}")
    if ops2d is None:
        raise ValueError("sbp metric method needs the 2-D operators")
    parts = _sbp_partials(spec, grid, ops2d)
    samples = {loc: _samples_from_partials(*parts[loc], loc)
               for loc in ("cell", "edge1", "edge2")}
    return MetricFields(cell=samples["cell"], edge1=samples["edge1"],
                        edge2=samples["edge2"], spec=spec, method=method)
