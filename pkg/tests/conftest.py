import numpy as np
import pytest

from stagwave import geometry, grid2d, metric as metric_ops, sbp1d


@pytest.fixture(scope="session")
def min_table():
    return sbp1d.load_table("min_norm")


@pytest.fixture(scope="session")
def max_table():
    return sbp1d.load_table("max_norm")


def dense_ops(ops):
    """1-D operators as dense arrays for oracle comparisons."""
    return (ops.D.toarray(), ops.Dhat.toarray(),
            ops.P.toarray(), ops.Phat.toarray())


def make_setup(table, kind="tfi", N=12, n2=None, variant="modified",
               params=None, method="analytic", periodic1=False,
               periodic2=False):
    """Grid, operators, metric, tensor, and kinetic matrix in one call."""
    n2 = n2 or N
    grid = grid2d.make_grid2d(N, n2, periodic1=periodic1,
                              periodic2=periodic2)
    ops1 = sbp1d.instantiate(table, N, periodic=periodic1)
    ops2 = sbp1d.instantiate(table, n2, periodic=periodic2)
    ops2d = grid2d.make_operators(grid, ops1, ops2)
    weights = grid2d.norm_weights(grid, ops1, ops2)
    spec = geometry.MappingSpec(kind, params or {})
    mf = geometry.build_metric_fields(
        spec, grid, ops2d if method == "sbp" else None, method=method)
    gop = metric_ops.build_metric_tensor(mf, ops2d, variant)
    kin = metric_ops.build_kinetic_matrix(gop, weights)
    return dict(grid=grid, ops1=ops1, ops2=ops2, ops2d=ops2d,
                weights=weights, spec=spec, metric=mf, gop=gop, kin=kin)


def random_fields(grid, rng):
    from stagwave.grid2d import loc_shape
    return (rng.standard_normal(loc_shape(grid, "cell")),
            rng.standard_normal(loc_shape(grid, "edge1")),
            rng.standard_normal(loc_shape(grid, "edge2")))
