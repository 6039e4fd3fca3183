import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psnet.density import (
    BoundsError,
    PointSet,
    adaptive_kernel_density,
    adaptive_sigma,
    fixed_kernel_density,
    read_dmap,
    sum_pool_downsample,
    write_dmap,
    write_pgm_visual,
)

from oracles import knn_sigma, truncated_kernel


def random_points(g, n, w, h):
    return PointSet(np.column_stack([g.uniform(0, w, n), g.uniform(0, h, n)]), w, h)


def test_empty_pointset_gives_zero_map():
    dmap = fixed_kernel_density(PointSet(np.zeros((0, 2)), 20, 10), sigma=3)
    assert dmap.shape == (10, 20)
    assert dmap.sum() == 0


def test_centered_point_unit_mass():
    dmap = fixed_kernel_density(PointSet([[100.0, 100.0]], 201, 201), sigma=5)
    assert dmap.sum() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("x,y", [(0.0, 0.0), (39.5, 0.2), (0.0, 29.9)])
def test_corner_point_matches_truncated_kernel(x, y):
    dmap = fixed_kernel_density(PointSet([[x, y]], 40, 30), sigma=4)
    assert dmap.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(dmap, truncated_kernel(x, y, 4, 40, 30), atol=1e-12)


def test_bad_sigma_and_dims():
    with pytest.raises(ValueError):
        fixed_kernel_density(PointSet([[1.0, 1.0]], 4, 4), sigma=0)
    with pytest.raises(ValueError):
        PointSet(np.zeros((0, 2)), 0, 4)


def test_point_out_of_bounds():
    with pytest.raises(BoundsError, match="point 1"):
        PointSet([[1.0, 1.0], [4.0, 1.0]], 4, 4)


def test_adaptive_sigma_pair():
    s = adaptive_sigma(PointSet([[0.0, 0.0], [10.0, 0.0]], 20, 20), k=1, beta=0.3)
    np.testing.assert_allclose(s, [3.0, 3.0])


def test_adaptive_sigma_collinear():
    pts = PointSet([[float(i), 0.0] for i in range(5)], 10, 10)
    s = adaptive_sigma(pts, k=2, beta=0.3)
    # interior point: neighbours at 1 and 1 -> mean 1; next-to-end point 1 and 1 as well
    assert s[2] == pytest.approx(0.3 * 1.0)
    # end point: neighbours at 1 and 2
    assert s[0] == pytest.approx(0.3 * 1.5)
    np.testing.assert_allclose(s, knn_sigma(pts.points.tolist(), 2, 0.3))


def test_adaptive_sigma_single_point_fallback():
    assert adaptive_sigma(PointSet([[3.0, 3.0]], 10, 10), default_sigma=7.0).tolist() == [7.0]


def test_adaptive_sigma_matches_bruteforce():
    g = np.random.default_rng(5)
    pts = random_points(g, 25, 80, 60)
    np.testing.assert_allclose(adaptive_sigma(pts, 3, 0.3), knn_sigma(pts.points.tolist(), 3, 0.3), rtol=1e-12)


@given(st.floats(0.1, 10.0), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_adaptive_sigma_homogeneous(c, seed):
    g = np.random.default_rng(seed)
    pts = g.uniform(0, 10, size=(8, 2))
    base = adaptive_sigma(PointSet(pts, 10, 10))
    scaled = adaptive_sigma(PointSet(pts * c, 101, 101))
    np.testing.assert_allclose(scaled, c * base, rtol=1e-9)


@given(st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_adding_a_neighbour_never_widens(seed):
    g = np.random.default_rng(seed)
    pts = g.uniform(0, 50, size=(int(g.integers(2, 10)), 2))
    before = adaptive_sigma(PointSet(pts, 50, 50))
    i = int(g.integers(len(pts)))
    near = np.clip(pts[i] + g.normal(0, 1, 2), 0, 49.9)
    after = adaptive_sigma(PointSet(np.vstack([pts, near]), 50, 50))
    assert after[i] <= before[i] + 1e-12


def test_adaptive_unit_mass_and_far_points_decompose():
    pts = PointSet([[10.0, 10.0], [90.0, 50.0]], 100, 60)
    dmap = adaptive_kernel_density(pts, k=1, beta=0.05)
    assert dmap.sum() == pytest.approx(2.0, abs=2e-3)
    sig = adaptive_sigma(pts, k=1, beta=0.05)
    a = fixed_kernel_density(PointSet([[10.0, 10.0]], 100, 60), sigma=sig[0])
    b = fixed_kernel_density(PointSet([[90.0, 50.0]], 100, 60), sigma=sig[1])
    np.testing.assert_allclose(dmap, a + b, atol=1e-12)


def test_cluster_sigmas_smaller_than_sparse_pair():
    cluster = [[20.0 + dx, 20.0 + dy] for dx in range(3) for dy in range(3)]
    sparse = [[5.0, 90.0], [95.0, 90.0]]
    sig = adaptive_sigma(PointSet(cluster + sparse, 100, 100), k=1, beta=0.3)
    assert sig[:9].max() < sig[9:].min()


def test_sum_pool():
    g = np.random.default_rng(0)
    m = g.random((16, 24))
    np.testing.assert_array_equal(sum_pool_downsample(m, 1), m)
    assert sum_pool_downsample(np.full((8, 8), 1 / 64), 8).tolist() == [[pytest.approx(1.0)]]
    assert sum_pool_downsample(m, 8).sum() == pytest.approx(m.sum(), abs=1e-6)
    with pytest.raises(ValueError):
        sum_pool_downsample(m, 5)


def test_translation_equivariance():
    pts = np.array([[30.0, 25.0], [36.5, 31.2], [40.0, 28.0]])
    a = adaptive_kernel_density(PointSet(pts, 80, 80))
    b = adaptive_kernel_density(PointSet(pts + [7, 5], 80, 80))
    np.testing.assert_allclose(b[5:, 7:], a[:-5, :-7], atol=1e-12)


def test_dmap_round_trip(tmp_path):
    g = np.random.default_rng(3)
    m = g.random((5, 7)).astype(np.float32)
    p = tmp_path / "a.dmap"
    write_dmap(p, m)
    raw = p.read_bytes()
    assert raw[:4] == b"DMAP"
    assert int.from_bytes(raw[4:8], "little") == 5 and int.from_bytes(raw[8:12], "little") == 7
    assert len(raw) == 12 + 4 * 35
    assert read_dmap(p).tobytes() == m.tobytes()


def test_pgm_visual(tmp_path):
    m = np.array([[0.0, 0.5], [1.0, 0.25]])
    p = tmp_path / "a.pgm"
    write_pgm_visual(p, m)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert list(raw[-4:]) == [0, 128, 255, 64]
