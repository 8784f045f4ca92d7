"""Add-one costs, second differences and empirical stabilization diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import PointConfiguration, sample_poisson
from .errors import FitError, PreconditionError, UnsupportedError
from .functionals import ScoreModel, evaluate_total, total_from_scores
from .records import write_csv
from .rng import RngStream

#: candidate exponents for :func:`fit_decay`
ALPHA_GRID = (0.5, 1.0, 1.5, 2.0)
MAX_EXTRA_POINTS = 7


def _as_point(y, d):
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != d:
        raise PreconditionError(f"point must have dimension {d}")
    return y


def _in_Y(model: ScoreModel, y) -> bool:
    return bool(model.Y.contains(y.reshape(1, -1))[0])


def _is_member(config: PointConfiguration, y) -> bool:
    return len(config) > 0 and bool(np.any(np.all(config.points == y, axis=1)))


def add_one_cost(model: ScoreModel, config: PointConfiguration, y) -> float:
    """``H(config + y) - H(config)`` at the configuration's scale.

    Points outside ``Y`` never enter the restricted process, so their cost is
    exactly zero.
    """
    y = _as_point(y, config.dim)
    if not _in_Y(model, y):
        return 0.0
    if _is_member(config, y):
        raise PreconditionError("added point already belongs to the configuration")
    before = evaluate_total(model, config).standardized_H
    after = evaluate_total(model, config.with_points(y)).standardized_H
    return after - before


def add_one_cost_from_scores(model: ScoreModel, config: PointConfiguration, y) -> float:
    """Same quantity as :func:`add_one_cost` via per-point score sums."""
    y = _as_point(y, config.dim)
    if not _in_Y(model, y):
        return 0.0
    if _is_member(config, y):
        raise PreconditionError("added point already belongs to the configuration")
    return total_from_scores(model, config.with_points(y)) - total_from_scores(model, config)


def second_difference(model: ScoreModel, config: PointConfiguration, y1, y2) -> float:
    """``H(c+y1+y2) - H(c+y1) - H(c+y2) + H(c)``, zero unless both points lie in ``Y``."""
    d = config.dim
    y1 = _as_point(y1, d)
    y2 = _as_point(y2, d)
    if np.array_equal(y1, y2):
        raise PreconditionError("second difference needs two distinct points")
    if not (_in_Y(model, y1) and _in_Y(model, y2)):
        return 0.0
    if _is_member(config, y1) or _is_member(config, y2):
        raise PreconditionError("added point already belongs to the configuration")
    h = lambda c: evaluate_total(model, c).standardized_H
    # canonical insertion order and commutative grouping make the result symmetric bit for bit
    pair = np.vstack([y1, y2])
    pair = pair[np.lexsort(pair.T[::-1])]
    outer = h(config.with_points(pair)) + h(config)
    inner = h(config.with_points(y1)) + h(config.with_points(y2))
    return outer - inner


def is_nonzero(model: ScoreModel, value: float, n: int) -> bool:
    return abs(value) > model.zero_tolerance(n)


def stabilization_radius_proxy(model: ScoreModel, config: PointConfiguration, i: int,
                               r_grid: Sequence[float], extra_points=()) -> float:
    """Smallest grid radius from which the score of point ``i`` never changes.

    The score is recomputed on ``(config + extra_points) & B(x_i, r)`` for each
    ``r`` of the grid and compared with the score on the whole set. This is a
    certificate for one realization only. If even the largest radius
    disagrees, that radius is returned and a warning is issued.
    """
    grid = np.asarray(r_grid, dtype=float)
    if grid.size == 0:
        raise PreconditionError("empty radius grid")
    if np.any(np.diff(grid) <= 0):
        raise PreconditionError("radius grid must be increasing")
    extra = np.asarray(extra_points, dtype=float).reshape(-1, config.dim)
    if len(extra) > MAX_EXTRA_POINTS:
        raise PreconditionError(f"at most {MAX_EXTRA_POINTS} extra points")
    full = config.with_points(extra) if len(extra) else config
    x = full.points[i]
    target = model.score(full, i)
    dist2 = np.sum((full.points - x) ** 2, axis=1)
    stable_from = None
    for r in grid[::-1]:
        keep = np.flatnonzero(dist2 <= r * r)
        local = full.subset(keep)
        value = model.score(local, int(np.searchsorted(keep, i)))
        if math.isclose(value, target, rel_tol=1e-12, abs_tol=1e-14):
            stable_from = r
        else:
            break
    if stable_from is None:
        warnings.warn("score of point never stabilized on the radius grid", RuntimeWarning)
        return float(grid[-1])
    return float(stable_from)


def random_extra_points(Y, rng: RngStream, max_points: int = MAX_EXTRA_POINTS) -> np.ndarray:
    """Extra set with cardinality uniform on ``0..max_points``, points uniform in ``Y``."""
    from .domain import _uniform

    gen = rng.generator()
    count = int(gen.integers(0, max_points + 1))
    return _uniform(Y, count, gen)


def wilson_interval(successes: int, trials: int, z: float = 1.0) -> tuple[float, float]:
    """Wilson score interval ``(centre, half_width)`` for a binomial proportion."""
    if trials <= 0:
        raise PreconditionError("need at least one trial")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return centre, half


@dataclass(frozen=True)
class ProbabilityEstimate:
    p_hat: float
    se: float
    reps: int
    hits: int


def nonzero_score_prob(model: ScoreModel, n: int, x, extra_points=(), reps: int = 100,
                       rng: RngStream = RngStream(0)) -> ProbabilityEstimate:
    """Fraction of fresh ``eta_n`` draws in which the score of ``x`` is nonzero.

    Each draw scores ``x`` in ``(eta_n & Y) + {x} + extra_points``. The standard
    error is the half-width of the Wilson interval at ``z = 1``.
    """
    if reps < 100:
        raise PreconditionError("nonzero_score_prob needs reps >= 100")
    x = _as_point(x, model.Y.dim)
    if not _in_Y(model, x):
        raise PreconditionError("x must lie in Y")
    extra = np.asarray(extra_points, dtype=float).reshape(-1, model.Y.dim)
    if len(extra) > MAX_EXTRA_POINTS:
        raise PreconditionError(f"at most {MAX_EXTRA_POINTS} extra points")
    added = np.vstack([x[None, :], extra])
    hits = 0
    for rep in range(reps):
        base = sample_poisson(n, model.Y, rng.spawn("nonzero", rep), scale_index=n)
        config = base.with_points(added)
        if is_nonzero(model, model.score(config, len(base)), n):
            hits += 1
    _, half = wilson_interval(hits, reps)
    return ProbabilityEstimate(hits / reps, half, reps, hits)


@dataclass(frozen=True)
class DecayFit:
    """``p ~ C * exp(-c * (n**(1/d) * dist)**alpha)`` fitted in the log domain.

    ``residual`` is the largest absolute log-domain deviation.
    """

    C_hat: float
    c_hat: float
    alpha_hat: float
    residual: float

    def predict(self, distances, n: int, d: int) -> np.ndarray:
        u = n ** (1.0 / d) * np.asarray(distances, dtype=float)
        return self.C_hat * np.exp(-self.c_hat * u ** self.alpha_hat)


def fit_decay(distances, probabilities, n: int, d: int = 2, alpha_grid=ALPHA_GRID) -> DecayFit:
    """Least-squares fit of ``log p = log C - c * (n**(1/d) dist)**alpha``.

    ``alpha`` is chosen from a fixed grid by the smallest sum of squares.
    """
    dist = np.asarray(distances, dtype=float)
    prob = np.asarray(probabilities, dtype=float)
    if dist.shape != prob.shape or dist.size < 4:
        raise PreconditionError("fit_decay needs equal-length inputs with at least 4 points")
    if np.any(prob <= 0) or np.any(prob > 1):
        raise FitError("all probabilities must lie in (0, 1]")
    if np.all(prob == prob[0]):
        raise FitError("flat data: probabilities show no decay")
    if np.count_nonzero(prob < 0.5) < 4:
        raise FitError("need at least 4 probabilities below 0.5")
    logp = np.log(prob)
    u = n ** (1.0 / d) * dist
    best = None
    for alpha in alpha_grid:
        z = u ** alpha
        design = np.column_stack([np.ones_like(z), -z])
        coef, *_ = np.linalg.lstsq(design, logp, rcond=None)
        resid = logp - design @ coef
        sse = float(resid @ resid)
        if coef[1] <= 0:
            continue
        if best is None or sse < best[0]:
            best = (sse, alpha, coef, float(np.max(np.abs(resid))))
    if best is None:
        raise FitError("no exponent on the grid gives a decaying fit")
    _, alpha, coef, resid = best
    return DecayFit(float(math.exp(coef[0])), float(coef[1]), float(alpha), resid)


def flat_fit_residual(probabilities) -> float:
    """Max log-domain deviation of the best constant fit (the no-decay baseline)."""
    logp = np.log(np.asarray(probabilities, dtype=float))
    return float(np.max(np.abs(logp - logp.mean())))


def write_decay_csv(path, rows, header=None):
    """``rows`` of ``(dist, n, p_hat, se, reps)``."""
    return write_csv(path, ["dist", "n", "p_hat", "se", "reps"], rows, header)


def write_radius_csv(path, rows, header=None):
    """``rows`` of ``(x, proxy_r, extra_count)``; ``x`` is spread over columns ``x1..xd``."""
    rows = [(*np.atleast_1d(x), r, c) for x, r, c in rows]
    d = len(rows[0]) - 2 if rows else 1
    return write_csv(path, [f"x{j + 1}" for j in range(d)] + ["proxy_r", "extra_count"], rows, header)


def point_at_depth(target, dist: float) -> np.ndarray:
    """A point inside ``target.region`` at distance ``dist`` from its boundary.

    The point lies on the ray from the centre along the first axis. Only
    boundary targets have a meaningful depth.
    """
    from .domain import Ball, Boundary, Box

    if not isinstance(target, Boundary):
        raise UnsupportedError("depth profiles need a boundary target")
    region = target.region
    if isinstance(region, Ball):
        if not 0 <= dist <= region.radius:
            raise PreconditionError("depth exceeds the ball radius")
        x = region.center.copy()
        x[0] += region.radius - dist
        return x
    if isinstance(region, Box):
        half = 0.5 * np.min(region.upper - region.lower)
        if not 0 <= dist <= half:
            raise PreconditionError("depth exceeds the box half-width")
        x = 0.5 * (region.lower + region.upper)
        x[0] = region.upper[0] - dist
        return x
    raise UnsupportedError(f"depth profile for {type(region).__name__}")
