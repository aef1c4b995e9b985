import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagwave import analysis, geometry, solver

from conftest import random_fields


def _config(**kw):
    kw.setdefault("mapping", geometry.MappingSpec("identity"))
    return solver.SolverConfig(**kw)


def test_config_json_roundtrip():
    cfg = _config(mapping=geometry.MappingSpec("tfi", {"a": 0.06}),
                  n1=24, n2=12, variant="unconditional", dt=0.01, T=0.3,
                  source=solver.SourceSpec(0.45, side="T"),
                  receivers=((0.5, 0.5), (0.25, 0.75)),
                  bc={"L": "periodic", "R": "periodic"})
    again = solver.SolverConfig.from_json(cfg.to_json())
    assert again.to_json() == cfg.to_json()
    assert again.mapping == cfg.mapping
    assert again.source == cfg.source


def test_config_validation():
    with pytest.raises(ValueError):
        _config(bc={"L": "periodic"})   # unpaired periodic sides
    with pytest.raises(ValueError):
        _config(dt=-0.1)


def test_ricker_derivatives_match_finite_differences():
    ts = np.linspace(0.2, 3.4, 23)
    eps = 1e-5
    for order in (1, 2, 3):
        got = solver.ricker_derivative(ts, 1.7, order)
        fd = (solver.ricker_derivative(ts + eps, 1.7, order - 1)
              - solver.ricker_derivative(ts - eps, 1.7, order - 1)) \
            / (2 * eps)
        assert np.abs(got - fd).max() < 1e-6 * max(
            1.0, np.abs(got).max())
    assert abs(solver.ricker(np.array(1.7)) - 1.0) < 1e-14
    with pytest.raises(ValueError):
        solver.ricker_derivative(0.0, 1.7, 4)


@settings(max_examples=25, deadline=None)
@given(r_star=st.floats(0.25, 0.75), n=st.integers(24, 96))
def test_source_moment_conditions(r_star, n):
    """The discrete delta reproduces moments 0..4 of the point source."""
    from stagwave import grid2d
    grid = grid2d.make_grid2d(n, n)
    idx, w = solver.discretize_point_source(r_star, grid.cells1, grid.h1)
    xi = grid.cells1[idx] - r_star
    for m in range(5):
        want = 1.0 if m == 0 else 0.0
        got = float(np.sum(w * xi ** m) * grid.h1)
        assert abs(got - want) < 1e-12 * max(1.0, np.abs(w).max())


def test_source_near_corner_rejected():
    from stagwave import grid2d
    grid = grid2d.make_grid2d(16, 16)
    with pytest.raises(ValueError):
        solver.discretize_point_source(0.05, grid.cells1, grid.h1)
    with pytest.raises(ValueError):
        solver.discretize_point_source(1.5, grid.cells1, grid.h1)


@pytest.mark.parametrize("variant", ["unconditional", "modified"])
@pytest.mark.parametrize("periodic", [False, True])
def test_semidiscrete_energy_conservation(variant, periodic):
    """dE/dt vanishes to rounding for random states with homogeneous SAT
    data or fully periodic boundaries, for both tensor variants."""
    bc = ({s: "periodic" for s in "LRBT"} if periodic
          else {s: "sat" for s in "LRBT"})
    cfg = _config(mapping=geometry.MappingSpec("tfi"), n1=16, bc=bc,
                  variant=variant, metric_method="analytic")
    disc = solver.Discretization(cfg)
    rng = np.random.default_rng(20)
    scale = 16 ** 2  # the rate involves h^-1 SAT scalings
    for _ in range(5):
        p, v1, v2 = random_fields(disc.grid, rng)
        state = solver.State(p=p, v1=v1, v2=v2, t=0.0)
        rate = disc.rhs(state, disc._stage_bc(0.0, 0.0, 0))
        r = analysis.energy_rate(state, rate, disc.kin, disc.weights)
        assert abs(r) < 1e-12 * scale


def test_rk4_temporal_order():
    """Fixed spatial grid, shrinking dt: the time-stepping error decays
    at fourth order."""
    cfg0 = _config(mapping=geometry.MappingSpec("identity"), n1=16,
                   T=0.2, metric_method="analytic")
    disc = solver.Discretization(cfg0)
    exact0 = analysis.mms_state(cfg0.mapping, disc.grid, disc.metric, 0.0)
    bdata = analysis.mms_boundary_data()

    def final_state(dt):
        cfg = _config(mapping=cfg0.mapping, n1=16, T=0.2, dt=dt,
                      metric_method="analytic")
        return solver.run(cfg, boundary_data=bdata, initial_state=exact0,
                          record_energy=False).final

    ref = solver.pack_state(final_state(0.00125))
    errs = [np.linalg.norm(solver.pack_state(final_state(dt)) - ref)
            for dt in (0.02, 0.01)]
    rate = math.log2(errs[0] / errs[1])
    assert rate > 3.7


def test_stage_bc_consistency_matters():
    """Naive stage boundary data (plain evaluation at the stage time)
    carries a visibly larger temporal error than the stage-consistent
    polynomial data.  The mapping is offset so the manufactured data is
    nonzero on the boundary."""
    spec = geometry.MappingSpec("tfi")
    cfg0 = _config(mapping=spec, n1=16, T=0.2, dt=0.002,
                   metric_method="analytic")
    disc = solver.Discretization(cfg0)
    exact0 = analysis.mms_state(spec, disc.grid, disc.metric, 0.0)
    bdata = analysis.mms_boundary_data()

    def final_state(dt, mode):
        cfg = _config(mapping=spec, n1=16, T=0.2, dt=dt,
                      stage_correction=mode, metric_method="analytic")
        return solver.pack_state(
            solver.run(cfg, boundary_data=bdata, initial_state=exact0,
                       record_energy=False).final)

    ref = final_state(0.00125, "consistent")
    errs = {mode: [np.linalg.norm(final_state(dt, mode) - ref)
                   for dt in (0.02, 0.01)]
            for mode in ("consistent", "naive")}
    rate = math.log2(errs["consistent"][0] / errs["consistent"][1])
    assert rate > 3.7
    for k in range(2):
        assert errs["naive"][k] > 1.5 * errs["consistent"][k]


def test_sample_field_cubic_exact():
    from stagwave import grid2d
    grid = grid2d.make_grid2d(12, 10)
    r1, r2 = grid2d.loc_coords(grid, "cell")
    R1, R2 = np.meshgrid(r1, r2, indexing="ij")
    f = 1.0 + 2 * R1 - R2 + 3 * R1 * R2 ** 2 + R1 ** 3
    for (a, b) in ((0.37, 0.54), (0.05, 0.95), (0.5, 0.5)):
        want = 1.0 + 2 * a - b + 3 * a * b ** 2 + a ** 3
        got = solver.sample_field(grid, "cell", f, a, b)
        assert abs(got - want) < 1e-12


@pytest.mark.parametrize("variant", ["unconditional", "modified"])
def test_assembled_rhs_matches_matrix_free(variant):
    cfg = _config(mapping=geometry.MappingSpec("tfi"), n1=12,
                  variant=variant, metric_method="analytic")
    disc = solver.Discretization(cfg)
    A = solver.assemble_rhs_matrix(disc)
    rng = np.random.default_rng(21)
    p, v1, v2 = random_fields(disc.grid, rng)
    state = solver.State(p=p, v1=v1, v2=v2, t=0.0)
    rate = disc.rhs(state, disc._stage_bc(0.0, 0.0, 0))
    got = np.concatenate([rate.dp.ravel(), rate.dv1.ravel(),
                          rate.dv2.ravel()])
    want = A @ solver.pack_state(state)
    assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())


def test_pack_unpack_roundtrip():
    cfg = _config(n1=10, metric_method="analytic")
    disc = solver.Discretization(cfg)
    rng = np.random.default_rng(22)
    p, v1, v2 = random_fields(disc.grid, rng)
    state = solver.State(p=p, v1=v1, v2=v2, t=0.5)
    back = solver.unpack_state(disc, solver.pack_state(state), t=0.5)
    assert np.array_equal(back.p, p)
    assert np.array_equal(back.v1, v1)
    assert np.array_equal(back.v2, v2)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_instability_raises():
    cfg = _config(mapping=geometry.MappingSpec("identity"), n1=16,
                  dt=0.5, T=40.0, metric_method="analytic")
    disc = solver.Discretization(cfg)
    exact0 = analysis.mms_state(cfg.mapping, disc.grid, disc.metric, 0.0)
    with pytest.raises(solver.InstabilityError):
        solver.run(cfg, boundary_data=analysis.mms_boundary_data(),
                   initial_state=exact0, record_energy=False)


def test_spd_check_guards_modified_variant():
    spec = geometry.MappingSpec("gaussian_hill", {"gamma": 4.0})
    with pytest.raises(RuntimeError):
        solver.Discretization(_config(mapping=spec, n1=16,
                                      variant="modified",
                                      metric_method="analytic"))
    disc = solver.Discretization(_config(mapping=spec, n1=16,
                                         variant="modified",
                                         metric_method="analytic",
                                         skip_spd_check=True))
    assert disc is not None
    # the unconditional variant needs no certificate
    solver.Discretization(_config(mapping=spec, n1=16,
                                  variant="unconditional",
                                  metric_method="analytic"))


def test_source_requires_sat_side():
    cfg = _config(source=solver.SourceSpec(0.5, side="T"),
                  bc={"B": "periodic", "T": "periodic"},
                  metric_method="analytic")
    with pytest.raises(ValueError):
        solver.Discretization(cfg)


def test_run_records_receivers_and_energy():
    cfg = _config(mapping=geometry.MappingSpec("identity"), n1=16,
                  dt=0.01, T=0.1, receivers=((0.5, 0.5),),
                  energy_stride=2, snapshot_times=(0.05,),
                  metric_method="analytic")
    disc = solver.Discretization(cfg)
    exact0 = analysis.mms_state(cfg.mapping, disc.grid, disc.metric, 0.0)
    res = solver.run(cfg, boundary_data=analysis.mms_boundary_data(),
                     initial_state=exact0)
    assert res.steps == 10
    assert res.receivers["p"].shape == (1, 11)
    assert np.isfinite(res.receivers["p"]).all()
    assert len(res.energy) == 6
    assert 0.05 in res.snapshots
    # the standing wave keeps its energy to time-integration accuracy
    E0, ET = res.energy[0].E, res.energy[-1].E
    assert abs(ET - E0) < 1e-7 * E0
