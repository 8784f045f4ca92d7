import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_asclt import domain
from poisson_asclt.domain import (Ball, Boundary, Box, HalfspacePolytope, PointConfiguration,
                                  WholeRegion, distance_to_target, restrict_scaled, sample_master,
                                  sample_poisson, sample_uniform)
from poisson_asclt.errors import CoverageError, DomainError, UnsupportedError
from poisson_asclt.rng import RngStream

SQUARE = Box([-0.5, -0.5], [0.5, 0.5])


def test_volumes():
    assert domain.volume(Box([0, 0], [1, 1])) == 1.0
    assert domain.volume(Box([0, 0], [2, 3])) == 6.0
    assert math.isclose(domain.volume(Ball([0, 0], 0.25)), math.pi / 16, rel_tol=1e-15)
    assert math.isclose(domain.volume(Ball([0, 0, 0], 1.0)), 4 * math.pi / 3, rel_tol=1e-15)


def test_polytope_volume_exact_and_mc():
    tri = HalfspacePolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert math.isclose(tri.volume(), 0.5, rel_tol=1e-12)
    cube4 = HalfspacePolytope(np.vstack([np.eye(4), -np.eye(4)]), np.ones(8))
    vol, se = domain.volume_with_error(cube4, samples=20000)
    assert abs(vol - 16.0) <= 4 * se + 1e-12


def test_region_validation():
    with pytest.raises(DomainError):
        Box([0, 0], [0, 1])
    with pytest.raises(DomainError):
        Ball([0, 0], -1.0)
    with pytest.raises(DomainError):
        HalfspacePolytope([[1, 0]], [1])


def test_scaling_about_origin():
    assert SQUARE.scaled(2.0) == Box([-1, -1], [1, 1])
    assert Ball([0.1, 0], 0.2).scaled(10.0) == Ball([1.0, 0], 2.0)


def test_distance_examples():
    assert distance_to_target([0.1, 0.2], WholeRegion(SQUARE)) == 0.0
    assert distance_to_target([0, 0], Boundary(Ball([0, 0], 0.25))) == 0.25
    assert distance_to_target([0.5, 0], Boundary(Ball([0, 0], 0.25))) == 0.25
    assert math.isclose(distance_to_target([0.3, 0.0], Boundary(SQUARE)), 0.2)
    assert math.isclose(distance_to_target([1.5, 0.5], Boundary(SQUARE)), math.hypot(1.0, 0.0))
    with pytest.raises(UnsupportedError):
        Boundary(HalfspacePolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1]))


def test_distance_outside_polytope():
    tri = HalfspacePolytope([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
    assert math.isclose(distance_to_target([1, 1], WholeRegion(tri)), math.sqrt(2) / 2, rel_tol=1e-6)


def test_configuration_invariants():
    with pytest.raises(DomainError):
        PointConfiguration([[0, 0], [0, 0]], SQUARE)
    with pytest.raises(DomainError):
        PointConfiguration([[0.9, 0]], SQUARE)
    with pytest.raises(DomainError):
        PointConfiguration([[np.nan, 0]], SQUARE)
    c = PointConfiguration([[0, 0], [0.1, 0.2]], SQUARE, 4)
    assert len(c) == 2 and c.n == 4
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_sample_poisson_examples():
    empty = sample_poisson(0.0, Box([0, 0], [1, 1]), RngStream(1))
    assert len(empty) == 0
    counts = [len(sample_poisson(100.0, Box([0, 0], [1, 1]), RngStream(2, i))) for i in range(10_000)]
    assert abs(np.mean(counts) - 100) <= 3 * 10 / 100
    counts = [len(sample_poisson(50.0, Box([0, 0], [2, 1]), RngStream(3, i))) for i in range(2000)]
    assert abs(np.mean(counts) - 100) <= 4 * 10 / math.sqrt(2000)
    with pytest.raises(DomainError):
        sample_poisson(-1.0, SQUARE, RngStream(0))


def test_sample_uniform_examples():
    assert sample_uniform(SQUARE, 0, RngStream(0)).shape == (0, 2)
    pts = sample_uniform(Box([0, 0], [1, 1]), 100_000, RngStream(4))
    assert np.all(np.abs(pts.mean(axis=0) - 0.5) <= 0.003)
    ball = Ball([0.1, -0.2], 0.3)
    pts = sample_uniform(ball, 5000, RngStream(5))
    assert np.all(np.linalg.norm(pts - ball.center, axis=1) <= ball.radius)
    again = sample_uniform(ball, 5000, RngStream(5))
    assert np.array_equal(pts, again)


def test_restrict_scaled_examples():
    master = PointConfiguration([[0, 0]], Box([-10, -10], [10, 10]))
    for n in (1, 7, 100):
        assert np.array_equal(restrict_scaled(master, n, SQUARE).points, [[0, 0]])
    master = PointConfiguration([[2, 0], [0.3, 0.1], [5, 5]], Box([-10, -10], [10, 10]))
    ident = restrict_scaled(master, 1, SQUARE)
    assert np.array_equal(ident.points, [[0.3, 0.1]])
    assert len(restrict_scaled(master, 4, SQUARE).points) == 1
    out = restrict_scaled(master, 16, SQUARE).points
    assert [0.5, 0.0] in out.tolist()


def test_restrict_scaled_coverage_error():
    master = sample_master(SQUARE, 100, RngStream(0))
    restrict_scaled(master, 100, SQUARE)
    with pytest.raises(CoverageError):
        restrict_scaled(master, 101, SQUARE)


def test_nesting_of_preimages():
    master = sample_master(SQUARE, 400, RngStream(9))
    prev = None
    for n in (10, 50, 200, 400):
        _, keep = restrict_scaled(master, n, SQUARE, return_index=True)
        keep = set(keep.tolist())
        if prev is not None:
            assert prev <= keep
        prev = keep


def test_restricted_mean_count():
    n = 50
    counts = [len(restrict_scaled(sample_master(SQUARE, n, RngStream(7, i)), n, SQUARE))
              for i in range(1000)]
    assert abs(np.mean(counts) - n) <= 4 * math.sqrt(n / 1000)


def test_origin_anchoring():
    Y = Box([1, 1], [2, 2])
    moved, shift = domain.origin_anchored(Y)
    assert bool(moved.contains(np.zeros((1, 2)))[0])
    assert moved == Y.translated(shift)
    same, zero = domain.origin_anchored(SQUARE)
    assert same == SQUARE and np.all(zero == 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4))
def test_ball_contains_its_samples(r, cx, cy):
    ball = Ball([cx, cy], r)
    pts = sample_uniform(ball, 200, RngStream(11))
    assert np.all(ball.contains(pts))
    assert np.all(ball.bounding_box().contains(pts))
