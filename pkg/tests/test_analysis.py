import math

import numpy as np
import pytest

from stagwave import analysis, geometry, solver

from conftest import make_setup, random_fields


def _disc(**kw):
    kw.setdefault("metric_method", "analytic")
    return solver.Discretization(solver.SolverConfig(**kw))


def test_energy_positive_and_additive(min_table):
    s = make_setup(min_table, kind="tfi", N=12)
    rng = np.random.default_rng(30)
    p, v1, v2 = random_fields(s["grid"], rng)
    state = solver.State(p=p, v1=v1, v2=v2, t=0.0)
    e = analysis.energy(state, s["kin"], s["weights"])
    assert e.E_a > 0 and e.E_k > 0
    assert e.E == e.E_a + e.E_k
    zero = solver.State(p=0 * p, v1=0 * v1, v2=0 * v2, t=0.0)
    ez = analysis.energy(zero, s["kin"], s["weights"])
    assert ez.E == 0.0


def test_kinetic_energy_oracle(min_table):
    """E_k computed through CG equals the dense-quadratic-form oracle
    0.5 (HJ v)^T (HJG)^(-1) (HJ v)."""
    from stagwave import metric as metric_ops
    s = make_setup(min_table, kind="gaussian_hill", params={"gamma": 0.5},
                   N=10, variant="modified")
    kin = s["kin"]
    rng = np.random.default_rng(31)
    _, v1, v2 = random_fields(s["grid"], rng)
    state = solver.State(p=np.zeros_like(s["metric"].cell.J),
                         v1=v1, v2=v2, t=0.0)
    e = analysis.energy(state, kin, s["weights"])
    A = metric_ops.assemble_HJG(kin).toarray()
    b = kin.pack(kin.hj1 * v1, kin.hj2 * v2)
    want = 0.5 * float(b @ np.linalg.solve(A, b))
    assert abs(e.E_k - want) < 1e-9 * max(1.0, abs(want))


def test_energy_rate_paths_agree(min_table):
    """The q-based shortcut and the CG-solve path give the same rate."""
    cfg = solver.SolverConfig(mapping=geometry.MappingSpec("tfi"), n1=12,
                              metric_method="analytic")
    disc = solver.Discretization(cfg)
    rng = np.random.default_rng(32)
    p, v1, v2 = random_fields(disc.grid, rng)
    state = solver.State(p=p, v1=v1, v2=v2, t=0.0)
    rate = disc.rhs(state, disc._stage_bc(0.0, 0.0, 0))
    fast = analysis.energy_rate(state, rate, disc.kin, disc.weights)
    slow_rate = solver.StateRate(dp=rate.dp, dv1=rate.dv1, dv2=rate.dv2)
    slow = analysis.energy_rate(state, slow_rate, disc.kin, disc.weights)
    assert abs(fast - slow) < 1e-8 * max(1.0, abs(fast))


def test_mms_satisfies_continuous_system():
    """The manufactured fields satisfy p_t = -div v and v_t = -grad p
    (verified spectrally via finite differences in space and time)."""
    rng = np.random.default_rng(33)
    x = 0.1 + 0.8 * rng.random(50)
    y = 0.1 + 0.8 * rng.random(50)
    t = 0.3
    eps = 1e-6
    p_t = analysis.mms_pressure(x, y, t, order=1)
    vx_p, vy_p = analysis.mms_velocity_xy(x, y, t + eps)
    vx_m, vy_m = analysis.mms_velocity_xy(x, y, t - eps)
    dvx = (analysis.mms_velocity_xy(x + eps, y, t)[0]
           - analysis.mms_velocity_xy(x - eps, y, t)[0]) / (2 * eps)
    dvy = (analysis.mms_velocity_xy(x, y + eps, t)[1]
           - analysis.mms_velocity_xy(x, y - eps, t)[1]) / (2 * eps)
    assert np.abs(p_t + dvx + dvy).max() < 1e-5
    dp_dx = (analysis.mms_pressure(x + eps, y, t)
             - analysis.mms_pressure(x - eps, y, t)) / (2 * eps)
    dp_dy = (analysis.mms_pressure(x, y + eps, t)
             - analysis.mms_pressure(x, y - eps, t)) / (2 * eps)
    assert np.abs((vx_p - vx_m) / (2 * eps) + dp_dx).max() < 1e-4
    assert np.abs((vy_p - vy_m) / (2 * eps) + dp_dy).max() < 1e-4


def test_mms_time_derivatives_cycle():
    x, y = np.array([0.3]), np.array([0.7])
    t = 0.41
    eps = 1e-6
    for order in (1, 2, 3):
        got = analysis.mms_pressure(x, y, t, order)
        fd = (analysis.mms_pressure(x, y, t + eps, order - 1)
              - analysis.mms_pressure(x, y, t - eps, order - 1)) / (2 * eps)
        assert np.abs(got - fd).max() < 1e-3


def test_error_norms_oracle():
    from stagwave import grid2d
    grid = grid2d.make_grid2d(10, 10)
    a = solver.State(p=np.ones(grid2d.loc_shape(grid, "cell")),
                     v1=np.zeros(grid2d.loc_shape(grid, "edge1")),
                     v2=np.zeros(grid2d.loc_shape(grid, "edge2")), t=0.0)
    b = solver.State(p=np.zeros_like(a.p), v1=a.v1.copy(),
                     v2=a.v2.copy(), t=0.0)
    err = analysis.error_norms(a, b, grid)
    n_pts = a.p.size
    assert abs(err["p"][0] - math.sqrt(grid.h1 * grid.h2 * n_pts)) < 1e-13
    assert err["p"][1] == 1.0
    assert err["v1"] == (0.0, 0.0)
    assert err["sum"][0] == err["p"][0]


def test_convergence_table_math():
    runs = [{"N": 16, "err": 1.0}, {"N": 32, "err": 0.125},
            {"N": 64, "err": 0.125 / 16}]
    tab = analysis.convergence_table(runs, error_keys=("err",))
    assert tab.rows[0]["q_err"] is None
    assert abs(tab.rows[1]["q_err"] - 3.0) < 1e-12
    assert abs(tab.rows[2]["q_err"] - 4.0) < 1e-12
    csv = tab.to_csv()
    assert csv.splitlines()[0] == "N,err,q_err"
    with pytest.raises(ValueError):
        analysis.convergence_table([{"N": 16, "err": 1.0},
                                    {"N": 48, "err": 0.1}],
                                   error_keys=("err",))


def test_symmetrizer_factorization():
    rng = np.random.default_rng(34)
    for _ in range(20):
        x1, y1, x2, y2 = rng.standard_normal(4)
        J = x1 * y2 - y1 * x2
        if J <= 0.05:
            continue
        g11 = x1 * x1 + y1 * y1
        g12 = x1 * x2 + y1 * y2
        g22 = x2 * x2 + y2 * y2
        F, W = analysis.symmetrizer_factor(g11, g12, g22, J)
        assert np.abs(F @ F.T - W).max() < 1e-12 * max(1.0,
                                                       np.abs(W).max())
        assert np.linalg.eigvalsh(W).min() > 0


def test_characteristic_slice_identities(min_table):
    """w_plus - w_minus recovers the pressure scaled by sqrt(2 J / g11)
    times J sqrt(g11), and the slice errors are finite and ordered."""
    cfg = solver.SolverConfig(mapping=geometry.MappingSpec("tfi"), n1=16,
                              T=0.1, dt=0.005, metric_method="analytic")
    disc = solver.Discretization(cfg)
    exact0 = analysis.mms_state(cfg.mapping, disc.grid, disc.metric, 0.0)
    res = solver.run(cfg, boundary_data=analysis.mms_boundary_data(),
                     initial_state=exact0, record_energy=False)
    exactT = analysis.mms_state(cfg.mapping, disc.grid, disc.metric,
                                res.final.t)
    cs = analysis.characteristic_errors(res.final, exactT, disc.metric,
                                        disc.grid, disc.ops2)
    n = len(cs.w_plus)
    i_cell = int(np.argmin(np.abs(disc.grid.cells1 - 0.5)))
    mc = disc.metric.cell
    J = mc.J[i_cell, :n]
    g11 = mc.g11[i_cell, :n]
    p = res.final.p[i_cell, :n]
    recon = (cs.w_plus - cs.w_minus) * np.sqrt(2.0 * J * g11) \
        / (2.0 * J * np.sqrt(g11))
    assert np.abs(recon - p).max() < 1e-12
    for pair in (cs.err_c, cs.err_nc):
        assert np.isfinite(pair).all() and pair[0] >= 0
