import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_asclt import spatial
from poisson_asclt.domain import Ball, Box, PointConfiguration, sample_poisson, sample_uniform
from poisson_asclt.errors import PreconditionError
from poisson_asclt.rng import RngStream

SQUARE = Box([-0.5, -0.5], [0.5, 0.5])


def line(*xs):
    return PointConfiguration(np.array(xs, float).reshape(-1, 1), Box([-10], [10]))


def test_empty_index():
    c = PointConfiguration(np.zeros((0, 2)), SQUARE)
    idx = spatial.build_index(c)
    assert idx.bucket_sizes().sum() == 0
    assert len(spatial.knn_query(idx, [0, 0], 3)) == 0
    assert len(spatial.range_query(idx, [0, 0], 1.0)) == 0


def test_bucket_sizes_sum_to_n():
    c = sample_poisson(300, SQUARE, RngStream(1))
    idx = spatial.build_index(c)
    assert idx.bucket_sizes().sum() == len(c)
    assert sorted(idx.order.tolist()) == list(range(len(c)))
    with pytest.raises(PreconditionError):
        spatial.build_index(c, 0.0)


def test_knn_examples():
    c = line(0, 1, 3)
    idx = spatial.build_index(c)
    assert spatial.knn_query(idx, [1.0], 1, exclude_self=True).tolist() == [0]
    assert sorted(spatial.knn_query(idx, [1.0], 5, exclude_self=True).tolist()) == [0, 2]
    tie = line(1, -1)
    assert spatial.knn_query(spatial.build_index(tie), [0.0], 1).tolist() == [1]


def test_range_examples():
    c = line(0, 1, 3)
    idx = spatial.build_index(c)
    assert len(spatial.range_query(idx, [0.5], 0.0)) == 0
    assert spatial.range_query(idx, [1.0], 0.0).tolist() == [1]
    assert spatial.range_query(idx, [1.0], 1.0).tolist() == [0, 1]


def test_degree_bound():
    c = sample_poisson(200, SQUARE, RngStream(2))
    idx = spatial.build_index(c)
    for i in range(len(c)):
        assert len(spatial.knn_query(idx, c.points[i], 4, exclude_self=True)) == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 120), st.integers(0, 2**32 - 1), st.floats(0.0, 0.6))
def test_queries_match_scans(d, count, seed, r):
    rng = RngStream(seed)
    Y = Box(np.full(d, -0.5), np.full(d, 0.5))
    pts = sample_uniform(Y, count, rng)
    c = PointConfiguration(pts, Y)
    idx = spatial.build_index(c)
    gen = rng.spawn("q").generator()
    for x in gen.uniform(-0.7, 0.7, (5, d)):
        x = np.clip(x, -0.5, 0.5) if count == 0 else x
        for k in (1, 3, 8):
            assert np.array_equal(spatial.knn_query(idx, x, k), spatial.knn_scan(pts, x, k))
        assert np.array_equal(spatial.range_query(idx, x, r), spatial.range_scan(pts, x, r))


def test_pairs_within_matches_brute_force():
    c = sample_poisson(400, SQUARE, RngStream(3))
    idx = spatial.build_index(c)
    for r in (0.0, 0.03, 0.1, 2.0):
        f, s = spatial.pairs_within(idx, r)
        d2 = np.sum((c.points[:, None] - c.points[None]) ** 2, axis=2)
        i, j = np.nonzero(np.triu(d2 <= r * r, 1))
        assert np.array_equal(f, i) and np.array_equal(s, j)


def test_single_cell_is_window():
    c = PointConfiguration([[0.1, 0.2]], SQUARE)
    poly = spatial.voronoi_cell_2d(c, 0)
    assert math.isclose(poly.area(), 1.0, rel_tol=1e-15)


def test_two_symmetric_cells():
    c = PointConfiguration([[-0.2, 0.0], [0.2, 0.0]], SQUARE)
    for i in (0, 1):
        assert math.isclose(spatial.voronoi_cell_2d(c, i).area(), 0.5, rel_tol=1e-12)


def test_partition_and_prefilter_identity():
    c = sample_poisson(200, SQUARE, RngStream(4))
    total = 0.0
    for i in range(len(c)):
        fast = spatial.voronoi_cell_2d(c, i)
        slow = spatial.voronoi_cell_2d(c, i, prefilter=False)
        assert np.array_equal(fast.vertices, slow.vertices)
        total += fast.area()
    assert math.isclose(total, 1.0, rel_tol=1e-9)
    areas = spatial.voronoi_areas(c, Ball([0, 0], 0.25))
    assert math.isclose(areas[:, 0].sum(), 1.0, rel_tol=1e-9)
    assert math.isclose(areas[:, 1].sum(), math.pi / 16, rel_tol=1e-9)


def test_three_cells_match_hit_counting():
    c = PointConfiguration(sample_uniform(SQUARE, 3, RngStream(5)), SQUARE)
    m = 1_000_000
    nodes = sample_uniform(SQUARE, m, RngStream(6))
    label = spatial.nearest_point(spatial.build_index(c), nodes)
    for i in range(3):
        p = np.mean(label == i)
        se = math.sqrt(p * (1 - p) / m)
        assert abs(spatial.voronoi_cell_2d(c, i).area() - p) <= 3 * se


def test_polygon_intersection_area():
    c = PointConfiguration([[0.0, 0.0]], SQUARE)
    poly = spatial.voronoi_cell_2d(c, 0)
    assert math.isclose(spatial.polygon_intersection_area(poly, Ball([0, 0], 0.25)), math.pi / 16,
                        rel_tol=1e-12)
    assert math.isclose(spatial.polygon_intersection_area(poly, Box([0, 0], [1, 1])), 0.25,
                        rel_tol=1e-12)
    assert math.isclose(spatial.polygon_intersection_area(poly, Ball([0.5, 0.5], 0.2)),
                        math.pi * 0.04 / 4, rel_tol=1e-12)


def test_polygon_csv(tmp_path):
    c = PointConfiguration([[0.0, 0.0]], SQUARE)
    path = tmp_path / "cell.csv"
    spatial.voronoi_cell_2d(c, 0).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "nucleus,vertex,x1,x2" and len(lines) == 5
