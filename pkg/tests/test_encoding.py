import numpy as np
import pytest

from splatpaint.encoding import (
    HashGridParams,
    contract,
    encode_direction,
    encode_directions,
    hash_encode,
    hash_encode_backward,
    normalize_positions,
)
from splatpaint.errors import ConfigError

from oracles import central_difference


@pytest.fixture
def grid():
    return HashGridParams.create(np.random.default_rng(0))


def test_contract_identity_inside_unit_ball():
    np.testing.assert_array_equal(contract(np.array([0.5, 0.0, 0.0])), [0.5, 0.0, 0.0])


def test_contract_formula_outside():
    np.testing.assert_allclose(
        contract(np.array([3.0, 0.0, 0.0])), [5.0 / 3.0, 0.0, 0.0], atol=1e-15
    )


def test_contract_limit_and_monotone():
    dir_ = np.array([0.3, -0.5, 0.8])
    dir_ /= np.linalg.norm(dir_)
    radii = [1.0, 1.5, 4.0, 50.0, 1e6]
    norms = [np.linalg.norm(contract(r * dir_)) for r in radii]
    assert all(b > a for a, b in zip(norms, norms[1:]))
    assert norms[-1] == pytest.approx(2.0, abs=1e-5)


def test_contract_continuous_at_unit_sphere():
    dir_ = np.array([1.0, 2.0, -2.0]) / 3.0
    inner = contract((1.0 - 1e-10) * dir_)
    outer = contract((1.0 + 1e-10) * dir_)
    np.testing.assert_allclose(inner, outer, atol=1e-9)


def test_vertex_query_returns_table_row(grid):
    res = int(grid.resolutions[0])
    # a [0,1] point landing exactly on integer vertex (2,3,1) of level 0
    p = np.array([[2.0 / res, 3.0 / res, 1.0 / res]])
    feats, fp = hash_encode(p, grid)
    stride = res + 1
    row = 2 + stride * (3 + stride * 1)
    np.testing.assert_array_equal(feats[0, :2], grid.tables[0, row])
    # exactly one unit weight on that corner
    assert fp.wts[0, 0].max() == 1.0 and fp.wts[0, 0].sum() == pytest.approx(1.0)


def test_cell_center_is_mean_of_corners(grid):
    res = int(grid.resolutions[0])
    p = np.array([[2.5 / res, 3.5 / res, 1.5 / res]])
    feats, fp = hash_encode(p, grid)
    np.testing.assert_allclose(
        feats[0, :2], grid.tables[0][fp.idx[0, 0]].mean(axis=0), atol=1e-15
    )
    np.testing.assert_array_equal(fp.wts[0, 0], np.full(8, 0.125))


def test_trilinear_weights_partition_unity(grid):
    rng = np.random.default_rng(1)
    pts = rng.random((200, 3))
    _, fp = hash_encode(pts, grid)
    np.testing.assert_allclose(fp.wts.sum(axis=2), 1.0, atol=1e-12)


def test_hash_determinism(grid):
    pts = np.random.default_rng(2).random((50, 3))
    f1, fp1 = hash_encode(pts, grid)
    f2, fp2 = hash_encode(pts, grid)
    assert np.array_equal(f1, f2)
    assert np.array_equal(fp1.idx, fp2.idx)


def test_dense_levels_use_in_range_rows(grid):
    pts = np.random.default_rng(3).random((100, 3))
    _, fp = hash_encode(pts, grid)
    for lvl in range(grid.levels):
        res = int(grid.resolutions[lvl])
        if grid.level_is_dense(lvl):
            assert fp.idx[lvl].max() < (res + 1) ** 3 <= grid.table_size
        else:
            assert fp.idx[lvl].max() < grid.table_size


def test_gradient_matches_finite_differences(grid):
    rng = np.random.default_rng(4)
    pts = rng.random((6, 3))
    w = rng.normal(size=(6, grid.feature_dim))

    def loss():
        feats, _ = hash_encode(pts, grid)
        return float((w * feats).sum())

    _, fp = hash_encode(pts, grid)
    grad = hash_encode_backward(fp, w, grid)
    nz = np.argwhere(np.abs(grad) > 1e-6)
    for k in rng.choice(nz.shape[0], size=min(15, nz.shape[0]), replace=False):
        lvl, row, f = nz[k]
        fd = central_difference(loss, grid.tables, (lvl, row, f), 1e-6)
        assert abs(fd - grad[lvl, row, f]) <= 1e-6 * max(1.0, abs(fd))


def test_backward_trivials(grid):
    pts = np.array([[0.25, 0.5, 0.75]])
    _, fp = hash_encode(pts, grid)
    zero = hash_encode_backward(fp, np.zeros((1, grid.feature_dim)), grid)
    assert not zero.any()
    res = int(grid.resolutions[0])
    _, fp = hash_encode(np.array([[1.0 / res, 0.0, 0.0]]), grid)
    d = np.zeros((1, grid.feature_dim))
    d[0, 0] = 1.0
    g = hash_encode_backward(fp, d, grid)
    stride = res + 1
    assert g[0, 1, 0] == 1.0
    assert np.abs(g).sum() == 1.0


def test_normalize_positions_range():
    pts = np.random.default_rng(5).normal(scale=10.0, size=(100, 3))
    q = normalize_positions(pts)
    assert q.min() >= 0.0 and q.max() <= 1.0


def test_grid_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        HashGridParams.create(rng, table_size=1000)  # not a power of two
    with pytest.raises(ConfigError):
        # resolution 25 selects dense (25^3 <= 2^14) but its 26^3 corners overflow
        HashGridParams.create(rng, table_size=2**14, base_resolution=25, levels=1)


def test_direction_dc_term():
    d = np.array([0.2, -0.4, 0.8])
    enc = encode_direction(d / np.linalg.norm(d))
    assert enc.values[0] == pytest.approx(0.282095, abs=1e-6)


def test_direction_degree_one_at_plus_z():
    enc = encode_direction(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(enc.values[1:4], [0.0, 0.488603, 0.0], atol=1e-6)


def test_direction_requires_unit_norm():
    with pytest.raises(ValueError):
        encode_direction(np.array([1.0, 1.0, 0.0]))


def test_direction_basis_orthonormality_monte_carlo():
    rng = np.random.default_rng(6)
    dirs = rng.normal(size=(100_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    basis = encode_directions(dirs)
    gram = basis.T @ basis / dirs.shape[0]
    expected = np.eye(16) / (4.0 * np.pi)
    np.testing.assert_allclose(gram, expected, atol=1e-2)
