import math
import warnings

import numpy as np
import pytest

from poisson_asclt import malliavin as ml
from poisson_asclt.domain import Ball, Boundary, Box, PointConfiguration, WholeRegion, sample_poisson
from poisson_asclt.errors import FitError, PreconditionError, UnsupportedError
from poisson_asclt.functionals import CliqueCount, Count, KnnEdgeLength, VoronoiVolume, unit_cube
from poisson_asclt.records import read_csv
from poisson_asclt.rng import RngStream

SQUARE = unit_cube(2)
A = Ball([0, 0], 0.25)


def config(n, seed):
    return sample_poisson(n, SQUARE, RngStream(seed), scale_index=n)


def test_count_operators():
    c = config(40, 1)
    assert ml.add_one_cost(Count(), c, [0.01, 0.02]) == 1.0
    assert ml.second_difference(Count(), c, [0.01, 0.02], [0.3, 0.3]) == 0.0


def test_outside_Y_is_zero():
    c = config(40, 2)
    for model in (Count(), CliqueCount(1, 1.0), KnnEdgeLength(1, 1.0), VoronoiVolume(A)):
        assert ml.add_one_cost(model, c, [0.7, 0.0]) == 0.0
        assert ml.add_one_cost_from_scores(model, c, [0.7, 0.0]) == 0.0
        assert ml.second_difference(model, c, [0.7, 0.0], [0.1, 0.1]) == 0.0


def test_duplicate_point_rejected():
    c = config(40, 3)
    with pytest.raises(PreconditionError):
        ml.add_one_cost(Count(), c, c.points[0])
    with pytest.raises(PreconditionError):
        ml.second_difference(Count(), c, [0.1, 0.1], [0.1, 0.1])


def test_clique_new_triangle():
    c = PointConfiguration([[0.0, 0.0], [0.1, 0.0]], SQUARE, 1)
    assert ml.add_one_cost(CliqueCount(2, 0.2), c, [0.05, 0.05]) == 1.0


def test_clique_far_pair_has_zero_second_difference():
    c = PointConfiguration([[-0.3, 0.0], [0.3, 0.0]], SQUARE, 1)
    assert ml.second_difference(CliqueCount(1, 0.1), c, [-0.25, 0.0], [0.25, 0.0]) == 0.0


def test_operator_code_paths_agree():
    gen = RngStream(4).generator()
    for model in (CliqueCount(1, 1.0), CliqueCount(2, 1.5), KnnEdgeLength(2, 1.0), VoronoiVolume(A)):
        c = config(60, 5)
        for y in gen.uniform(-0.5, 0.5, (5, 2)):
            assert math.isclose(ml.add_one_cost(model, c, y), ml.add_one_cost_from_scores(model, c, y),
                                rel_tol=1e-9, abs_tol=1e-9)


def test_second_difference_symmetry_and_clique_sign():
    gen = RngStream(6).generator()
    models = (CliqueCount(1, 1.0), KnnEdgeLength(1, 1.0), VoronoiVolume(A))
    for rep in range(20):
        c = config(50, 100 + rep)
        y1, y2 = gen.uniform(-0.5, 0.5, (2, 2))
        for model in models:
            assert ml.second_difference(model, c, y1, y2) == ml.second_difference(model, c, y2, y1)
        assert ml.add_one_cost(CliqueCount(1, 1.0), c, y1) >= 0


def test_proxy_count_gives_smallest_radius():
    c = config(30, 7)
    grid = np.linspace(0.01, 2.0, 50)
    assert ml.stabilization_radius_proxy(Count(), c, 0, grid) == grid[0]


def test_proxy_clique_is_local():
    model = CliqueCount(1, 1.0)
    n = 100
    for seed in range(10):
        c = config(n, 200 + seed)
        if len(c) == 0:
            continue
        grid = np.unique(np.r_[np.linspace(0.005, 1.5, 60), model.radius(n)])
        extra = ml.random_extra_points(SQUARE, RngStream(seed, 9))
        assert ml.stabilization_radius_proxy(model, c, 0, grid, extra) <= model.radius(n)


def test_proxy_knn_line():
    # x = 1 and 0 are mutual nearest neighbours, which B(1, 1) already shows
    c = PointConfiguration([[0.0], [1.0], [3.0]], Box([-10], [10]), 1)
    grid = [0.5, 1.0, 2.0, 4.0]
    assert ml.stabilization_radius_proxy(KnnEdgeLength(1, 1.0, Box([-10], [10])), c, 1, grid) == 1.0


def test_proxy_never_stable_warns():
    class Jumpy(Count):
        def score(self, config, i):
            return float(len(config))

    c = config(30, 8)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert ml.stabilization_radius_proxy(Jumpy(), c, 0, [0.01, 0.02]) == 0.02
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    with pytest.raises(PreconditionError):
        ml.stabilization_radius_proxy(Count(), c, 0, [])


def test_random_extra_points():
    sizes = set()
    for s in range(200):
        pts = ml.random_extra_points(SQUARE, RngStream(s))
        assert len(pts) <= 7 and np.all(SQUARE.contains(pts))
        sizes.add(len(pts))
    assert sizes == set(range(8))


def test_nonzero_prob_count_and_knn():
    est = ml.nonzero_score_prob(Count(), 50, [0, 0], reps=100, rng=RngStream(1))
    assert est.p_hat == 1.0
    est = ml.nonzero_score_prob(KnnEdgeLength(1, 1.0), 50, [0, 0], reps=100, rng=RngStream(2))
    assert abs(est.p_hat - (1 - math.exp(-50))) <= 3 * est.se + 1e-12
    with pytest.raises(PreconditionError):
        ml.nonzero_score_prob(Count(), 50, [0, 0], reps=99)
    with pytest.raises(PreconditionError):
        ml.nonzero_score_prob(Count(), 50, [0.9, 0], reps=100)


def test_nonzero_prob_voronoi_deep_inside():
    x = ml.point_at_depth(Boundary(A), 0.2)
    est = ml.nonzero_score_prob(VoronoiVolume(A), 10_000, x, reps=100, rng=RngStream(3))
    assert est.p_hat - est.se < 0.01


def test_wilson_interval():
    centre, half = ml.wilson_interval(0, 100)
    assert centre > 0 and half > 0 and centre - half <= 1e-15
    centre, half = ml.wilson_interval(50, 100)
    assert centre == 0.5 and math.isclose(half, math.sqrt(0.25 / 100 + 1 / 40000) / (1 + 1 / 100))


def test_fit_decay_exact():
    dist = np.linspace(0, 3, 10)
    fit = ml.fit_decay(dist, np.exp(-2 * dist), n=1, d=2)
    assert fit.alpha_hat == 1.0
    assert math.isclose(fit.C_hat, 1.0, rel_tol=1e-9) and math.isclose(fit.c_hat, 2.0, rel_tol=1e-9)
    assert fit.residual < 1e-10
    assert np.allclose(fit.predict(dist, 1, 2), np.exp(-2 * dist))


def test_fit_decay_noisy():
    gen = RngStream(5).generator()
    dist = np.linspace(0.2, 3, 15)
    p = np.minimum(np.exp(-2 * dist) * (1 + 0.05 * gen.standard_normal(15)), 1.0)
    fit = ml.fit_decay(dist, p, n=1)
    assert abs(fit.c_hat - 2.0) <= 0.3
    assert fit.residual < ml.flat_fit_residual(p) / 5


def test_fit_decay_errors():
    with pytest.raises(FitError):
        ml.fit_decay([0, 1, 2, 3], [0.3] * 4, n=1)
    with pytest.raises(FitError):
        ml.fit_decay([0, 1, 2, 3], [0.5, 0.2, 0.0, 0.1], n=1)
    with pytest.raises(FitError):
        ml.fit_decay([0, 1, 2, 3], [0.9, 0.8, 0.7, 0.4], n=1)
    with pytest.raises(PreconditionError):
        ml.fit_decay([0, 1, 2], [0.3, 0.2, 0.1], n=1)


def test_point_at_depth():
    x = ml.point_at_depth(Boundary(A), 0.1)
    assert np.allclose(x, [0.15, 0.0])
    box = Box([-0.2, -0.2], [0.2, 0.2])
    assert np.allclose(ml.point_at_depth(Boundary(box), 0.05), [0.15, 0.0])
    with pytest.raises(UnsupportedError):
        ml.point_at_depth(WholeRegion(SQUARE), 0.1)


def test_diagnostic_csvs(tmp_path):
    ml.write_decay_csv(tmp_path / "decay.csv", [(0.1, 100, 0.5, 0.05, 100)], {"config_hash": "x", "seed": 1})
    header, rows = read_csv(tmp_path / "decay.csv")
    assert header == {"config_hash": "x", "seed": "1"} and rows[0]["p_hat"] == "0.5"
    ml.write_radius_csv(tmp_path / "radius.csv", [(np.array([0.1, 0.2]), 0.3, 2)])
    _, rows = read_csv(tmp_path / "radius.csv")
    assert list(rows[0]) == ["x1", "x2", "proxy_r", "extra_count"]
