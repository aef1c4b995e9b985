import numpy as np
import pytest

from stagwave import metric as metric_ops

from conftest import make_setup


@pytest.mark.parametrize("variant", ["unconditional", "modified"])
def test_apply_matches_assembled(min_table, variant):
    """The matrix-free tensor application agrees with the materialized
    sparse HJG on random paired fields."""
    s = make_setup(min_table, kind="tfi", N=10, variant=variant)
    kin = s["kin"]
    A = metric_ops.assemble_HJG(kin).toarray()
    rng = np.random.default_rng(7)
    for _ in range(3):
        x = rng.standard_normal(A.shape[0])
        w1, w2 = kin.unpack(x)
        got = kin.pack(*kin.apply_HJG(w1, w2))
        want = A @ x
        assert np.abs(got - want).max() < 1e-12 * max(1.0,
                                                      np.abs(want).max())


@pytest.mark.parametrize("variant", ["unconditional", "modified"])
def test_HJG_is_symmetric(min_table, variant):
    s = make_setup(min_table, kind="gaussian_hill",
                   params={"gamma": 0.8}, N=10, variant=variant)
    A = metric_ops.assemble_HJG(s["kin"]).toarray()
    assert np.abs(A - A.T).max() < 1e-13 * np.abs(A).max()


def test_identity_mapping_tensor(min_table):
    """On the identity mapping the modified tensor is exactly the
    identity; the unconditional one reproduces smooth fields to the
    interpolation accuracy."""
    s = make_setup(min_table, kind="identity", N=12, variant="modified")
    rng = np.random.default_rng(8)
    from conftest import random_fields
    _, w1, w2 = random_fields(s["grid"], rng)
    g1, g2 = s["gop"].apply(w1, w2)
    assert np.abs(g1 - w1).max() < 1e-13
    assert np.abs(g2 - w2).max() < 1e-13

    su = make_setup(min_table, kind="identity", N=12,
                    variant="unconditional")
    from stagwave.grid2d import loc_coords
    r1, r2 = loc_coords(su["grid"], "edge1")
    f1 = np.sin(2.1 * r1)[:, None] * np.cos(1.3 * loc_coords(
        su["grid"], "edge1")[1])[None, :]
    r1b, r2b = loc_coords(su["grid"], "edge2")
    f2 = np.cos(1.7 * r1b)[:, None] * np.sin(2.4 * r2b)[None, :]
    g1, g2 = su["gop"].apply(f1, f2)
    assert np.abs(g1 - f1).max() < 5e-3
    assert np.abs(g2 - f2).max() < 5e-3


def test_unconditional_always_definite(min_table):
    """lambda_min(HJG) > 0 for the interpolation-sandwich variant even on
    a strongly deformed grid where the modified variant is indefinite."""
    s = make_setup(min_table, kind="gaussian_hill", params={"gamma": 4.0},
                   N=10, variant="unconditional")
    A = metric_ops.assemble_HJG(s["kin"]).toarray()
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert lam.min() > 0

    sm = make_setup(min_table, kind="gaussian_hill", params={"gamma": 4.0},
                    N=10, variant="modified")
    Am = metric_ops.assemble_HJG(sm["kin"]).toarray()
    lamm = np.linalg.eigvalsh(0.5 * (Am + Am.T))
    assert lamm.min() < 0


def test_solve_HJG_inverts_apply(min_table):
    s = make_setup(min_table, kind="tfi", N=10, variant="modified")
    kin = s["kin"]
    rng = np.random.default_rng(9)
    from conftest import random_fields
    _, w1, w2 = random_fields(s["grid"], rng)
    r1, r2 = kin.apply_HJG(w1, w2)
    z1, z2 = kin.solve_HJG(r1, r2, tol=1e-13)
    assert np.abs(z1 - w1).max() < 1e-9
    assert np.abs(z2 - w2).max() < 1e-9
    # preconditioned path reaches the same answer
    z1p, z2p = kin.solve_HJG(r1, r2, tol=1e-13, precondition=True)
    assert np.abs(z1p - w1).max() < 1e-9


def test_cg_raises_on_indefinite(min_table):
    s = make_setup(min_table, kind="gaussian_hill", params={"gamma": 4.0},
                   N=10, variant="modified")
    kin = s["kin"]
    rng = np.random.default_rng(10)
    from conftest import random_fields
    _, w1, w2 = random_fields(s["grid"], rng)
    with pytest.raises(metric_ops.ConvergenceError):
        kin.solve_HJG(w1, w2, tol=1e-13)


def test_cg_zero_rhs():
    z = metric_ops.conjugate_gradient(lambda x: 2.0 * x, np.zeros(5))
    assert np.array_equal(z, np.zeros(5))


def test_cg_oracle_dense_spd():
    rng = np.random.default_rng(11)
    B = rng.standard_normal((30, 30))
    A = B @ B.T + 30 * np.eye(30)
    b = rng.standard_normal(30)
    z = metric_ops.conjugate_gradient(lambda x: A @ x, b, tol=1e-13)
    assert np.abs(A @ z - b).max() < 1e-10


def test_unknown_variant_rejected(min_table):
    s = make_setup(min_table, kind="identity", N=10)
    with pytest.raises(ValueError):
        metric_ops.build_metric_tensor(s["metric"], s["ops2d"], "hybrid")
