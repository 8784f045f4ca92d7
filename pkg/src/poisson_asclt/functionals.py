"""Score functions and totals ``H_n`` for the supported geometric statistics.

A model's :meth:`ScoreModel.score` returns the per-point contribution
``xi_n`` *including* the model's prefactor, so that summing it over a
configuration reproduces ``standardized_H``:

* ``Count``: ``H_n = N``.
* ``KnnEdgeLength(k, m)``: ``H_n = n**(m/d) * L`` with ``L`` the total
  ``m``-th power edge length of the undirected kNN graph.
* ``CliqueCount(k, r)``: ``H_n`` is the number of ``(k+1)``-cliques of the
  geometric graph with connection radius ``r * n**(-1/d)``.
* ``VoronoiVolume(A)``: ``H_n = n * (vol(A_n) - vol(A))`` with ``A_n`` the
  union of Voronoi cells whose nuclei lie in ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Box, Boundary, PointConfiguration, Region, WholeRegion
from .errors import DegenerateModelError, PreconditionError, UnsupportedError
from .rng import RngStream
from . import spatial


def unit_cube(d: int) -> Box:
    return Box(np.full(d, -0.5), np.full(d, 0.5))


@dataclass(frozen=True)
class FunctionalValue:
    raw: float
    standardized_H: float


# ---------------------------------------------------------------------------
# kNN edge length


def _knn_weights(table: np.ndarray) -> np.ndarray:
    """1/2 for mutual kNN relations, 1 for one-sided ones (``-1`` padding -> 0)."""
    n = table.shape[0]
    valid = table >= 0
    rows = np.repeat(np.arange(n), table.shape[1]).reshape(table.shape)
    fwd = rows[valid] * n + table[valid]
    rev = table[valid] * n + rows[valid]
    w = np.zeros(table.shape)
    w[valid] = np.where(np.isin(rev, fwd), 0.5, 1.0)
    return w


def knn_scores(config: PointConfiguration, k: int, m: float, index=None) -> np.ndarray:
    """Unscaled scores ``xi^(m)`` of every point (zeros if fewer than 2 points)."""
    n = len(config)
    if n < 2:
        return np.zeros(n)
    index = index or spatial.build_index(config)
    table = spatial.knn_table(index, k)
    w = _knn_weights(table)
    pts = config.points
    lengths = np.linalg.norm(pts[table] - pts[:, None, :], axis=2) ** m
    return np.sum(w * lengths, axis=1)


def knn_score(config: PointConfiguration, i: int, k: int, m: float, index=None) -> float:
    """Unscaled kNN score of point ``i``, computed from point queries alone.

    Each neighbour ``y`` of ``x`` contributes ``|x - y|**m``, halved when
    ``x`` is also among the ``k`` nearest neighbours of ``y``.
    """
    n = len(config)
    if n < 2:
        raise DegenerateModelError("kNN score needs at least two points")
    if k < 1:
        raise PreconditionError("k must be at least 1")
    index = index or spatial.build_index(config)
    pts = config.points
    x = pts[i]
    total = 0.0
    for y in spatial.knn_query(index, x, k, exclude_self=True):
        back = spatial.knn_query(index, pts[y], k, exclude_self=True)
        dist = math.sqrt(float(np.sum((x - pts[y]) ** 2)))
        total += dist ** m * (0.5 if i in back else 1.0)
    return total


# ---------------------------------------------------------------------------
# cliques


def _clique_counts(n: int, first: np.ndarray, second: np.ndarray, size: int):
    """Number of ``size``-cliques and, per vertex, cliques containing it."""
    per = np.zeros(n, dtype=np.int64)
    if size == 1:
        per[:] = 1
        return n, per
    if size == 2:
        per += np.bincount(first, minlength=n)
        per += np.bincount(second, minlength=n)
        return len(first), per
    forward = [set() for _ in range(n)]
    for a, b in zip(first.tolist(), second.tolist()):
        forward[a].add(b)
    total = 0
    stack = []

    def grow(cands, depth):
        nonlocal total
        if depth == size:
            total += 1
            for v in stack:
                per[v] += 1
            return
        for v in sorted(cands):
            stack.append(v)
            grow(cands & forward[v], depth + 1)
            stack.pop()

    for v in range(n):
        if len(forward[v]) >= size - 1:
            stack.append(v)
            grow(forward[v], 1)
            stack.pop()
    return total, per


def clique_counts(config: PointConfiguration, k: int, radius: float, index=None):
    """``(C_k, per_point)`` for ``(k+1)``-cliques of the radius-``radius`` graph."""
    if k < 1:
        raise PreconditionError("clique order k must be at least 1")
    if not radius > 0:
        raise PreconditionError("graph radius must be positive")
    n = len(config)
    if n == 0:
        return 0, np.zeros(0, dtype=np.int64)
    index = index or spatial.build_index(config, spatial.cell_edge_for_radius(config, radius))
    first, second = spatial.pairs_within(index, radius)
    return _clique_counts(n, first, second, k + 1)


def clique_score(config: PointConfiguration, i: int, k: int, radius: float, index=None) -> float:
    """``(k+1)``-cliques containing point ``i``, divided by ``k + 1``.

    Only points of the closed ball ``B(x_i, radius)`` are inspected, so the
    score is local by construction. ``radius`` is the graph connection radius.
    """
    if k < 1:
        raise PreconditionError("clique order k must be at least 1")
    if not radius > 0:
        raise PreconditionError("graph radius must be positive")
    index = index or spatial.build_index(config, spatial.cell_edge_for_radius(config, radius))
    pts = config.points
    nbrs = [j for j in spatial.range_query(index, pts[i], radius).tolist() if j != i]
    if len(nbrs) < k:
        return 0.0
    sub = pts[nbrs]
    d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=2)
    a, b = np.nonzero(np.triu(d2 <= radius * radius, 1))
    count, _ = _clique_counts(len(nbrs), a, b, k)
    return count / (k + 1)


# ---------------------------------------------------------------------------
# Voronoi set approximation


@dataclass(frozen=True)
class Exact2D:
    def __repr__(self):
        return "exact2d"


@dataclass(frozen=True)
class MonteCarlo:
    quadrature_count: int
    seed: int = 0

    def __post_init__(self):
        if int(self.quadrature_count) < 1:
            raise PreconditionError("quadrature_count must be positive")

    def __repr__(self):
        return f"mc(quadrature_count={self.quadrature_count}, seed={self.seed})"


def quadrature_count_for(n: int, sd_H: float, vol_Y: float = 1.0, target: float = 0.05) -> int:
    """Quadrature size keeping the MC noise in ``H_n`` below ``target * sd(H_n)``."""
    # worst case Bernoulli variance 1/4 for the in-A_n indicator
    return int(math.ceil((n * vol_Y * 0.5 / (target * sd_H)) ** 2))


def _quadrature_labels(config: PointConfiguration, method: MonteCarlo, index=None):
    stream = RngStream(method.seed, config.master_seed).spawn("voronoi-quadrature", config.n)
    nodes = stream.generator().random((method.quadrature_count, config.dim))
    box = config.window.bounding_box()
    nodes = box.lower + nodes * (box.upper - box.lower)
    index = index or spatial.build_index(config)
    return nodes, spatial.nearest_point(index, nodes)


def voronoi_cell_areas(config: PointConfiguration, A: Region, method, which=None, index=None):
    """Rows ``(vol(C_i), vol(C_i & A))`` for the requested nuclei."""
    if which is None:
        which = np.arange(len(config))
    which = np.asarray(which, dtype=np.int64).reshape(-1)
    if isinstance(method, Exact2D):
        if config.dim != 2:
            raise UnsupportedError("Exact2D needs d = 2")
        return spatial.voronoi_areas(config, A, which, index)
    nodes, label = _quadrature_labels(config, method, index)
    in_a = A.contains(nodes)
    w = config.window.volume() / method.quadrature_count
    cell = np.bincount(label, minlength=len(config)) * w
    cell_a = np.bincount(label[in_a], minlength=len(config)) * w
    return np.column_stack([cell[which], cell_a[which]])


def voronoi_score(config: PointConfiguration, i: int, A: Region, method=None, index=None) -> float:
    """Unscaled score ``1_A(x) vol(C & A^c) - 1_{A^c}(x) vol(C & A)`` of nucleus ``i``."""
    method = Exact2D() if method is None else method
    if len(config) == 0:
        raise PreconditionError("empty configuration has no cells")
    area, area_a = voronoi_cell_areas(config, A, method, [i], index)[0]
    if bool(A.contains(config.points[i])[0]):
        return float(area - area_a)
    return float(-area_a)


# ---------------------------------------------------------------------------
# models


class ScoreModel:
    """A functional ``H_n = sum_x xi_n(x, eta_n & Y)`` and its metadata."""

    Y: Region

    @property
    def tau(self) -> float:
        return 1.0

    @property
    def target(self):
        return WholeRegion(self.Y)

    def descriptor(self) -> str:
        raise NotImplementedError

    @property
    def model_id(self) -> str:
        return f"{self.descriptor()} on {self.Y!r}"

    def total(self, config: PointConfiguration) -> FunctionalValue:
        raise NotImplementedError

    def score(self, config: PointConfiguration, i: int) -> float:
        raise NotImplementedError

    def empty_total(self, n: int) -> float:
        """Value of ``H_n`` on the empty configuration."""
        return 0.0

    def zero_tolerance(self, n: int) -> float:
        """Largest ``|D H|`` treated as zero (rounding noise in float totals)."""
        return 0.0

    def exact_moments(self, n: int):
        """``(E H_n, Var H_n)`` when known in closed form, else ``None``."""
        return None

    def _check(self, config: PointConfiguration):
        if config.window != self.Y:
            raise PreconditionError(f"configuration window {config.window!r} is not Y={self.Y!r}")


@dataclass(frozen=True)
class Count(ScoreModel):
    Y: Region = field(default_factory=lambda: unit_cube(2))

    def descriptor(self):
        return "count"

    def total(self, config):
        return FunctionalValue(float(len(config)), float(len(config)))

    def score(self, config, i):
        return 1.0

    def exact_moments(self, n):
        m = n * self.Y.volume()
        return m, m


@dataclass(frozen=True)
class Constant(ScoreModel):
    """Deterministic synthetic functional ``H_n = value`` (zero variance)."""

    value: float = 1.0
    Y: Region = field(default_factory=lambda: unit_cube(2))

    def descriptor(self):
        return f"constant(value={self.value!r})"

    def total(self, config):
        return FunctionalValue(self.value, self.value)

    def score(self, config, i):
        return self.value / len(config)

    def empty_total(self, n):
        return self.value

    def exact_moments(self, n):
        return self.value, 0.0


@dataclass(frozen=True)
class KnnEdgeLength(ScoreModel):
    k: int = 1
    m: float = 1.0
    Y: Region = field(default_factory=lambda: unit_cube(2))

    def __post_init__(self):
        if int(self.k) < 1 or self.m < 0:
            raise PreconditionError("kNN model needs k >= 1 and m >= 0")

    def descriptor(self):
        return f"knn(k={self.k}, m={self.m!r})"

    def prefactor(self, n):
        return n ** (self.m / self.Y.dim)

    def total(self, config):
        self._check(config)
        raw = float(np.sum(knn_scores(config, self.k, self.m)))
        return FunctionalValue(raw, self.prefactor(config.n) * raw)

    def score(self, config, i):
        self._check(config)
        if len(config) < 2:
            return 0.0
        return self.prefactor(config.n) * knn_score(config, i, self.k, self.m)

    def zero_tolerance(self, n):
        return 1e-12 * self.prefactor(n)


@dataclass(frozen=True)
class CliqueCount(ScoreModel):
    k: int = 1
    r: float = 1.0
    Y: Region = field(default_factory=lambda: unit_cube(2))

    def __post_init__(self):
        if int(self.k) < 1 or not self.r > 0:
            raise PreconditionError("clique model needs k >= 1 and r > 0")

    def descriptor(self):
        return f"clique(k={self.k}, r={self.r!r})"

    def radius(self, n: int) -> float:
        return self.r * n ** (-1.0 / self.Y.dim)

    def total(self, config):
        self._check(config)
        count, _ = clique_counts(config, self.k, self.radius(config.n))
        return FunctionalValue(float(count), float(count))

    def score(self, config, i):
        self._check(config)
        return clique_score(config, i, self.k, self.radius(config.n))


@dataclass(frozen=True)
class VoronoiVolume(ScoreModel):
    A: Region = None
    method: object = None
    Y: Region = None

    def __post_init__(self):
        A = self.A
        if A is None:
            raise PreconditionError("Voronoi model needs a set A")
        d = A.dim
        if d < 2:
            raise PreconditionError("Voronoi model needs d >= 2")
        if self.Y is None:
            object.__setattr__(self, "Y", unit_cube(d))
        if self.Y != unit_cube(d):
            raise PreconditionError("Voronoi model is defined on Y = [-1/2, 1/2]^d")
        box = A.bounding_box()
        if not (np.all(box.lower > -0.5) and np.all(box.upper < 0.5)):
            raise PreconditionError("A must lie strictly inside (-1/2, 1/2)^d")
        if self.method is None:
            if d != 2:
                raise PreconditionError("pass a MonteCarlo method for d != 2")
            object.__setattr__(self, "method", Exact2D())
        if isinstance(self.method, Exact2D) and d != 2:
            raise UnsupportedError("Exact2D needs d = 2")

    @property
    def tau(self):
        return 1.0 - 1.0 / self.Y.dim

    @property
    def target(self):
        return Boundary(self.A)

    def descriptor(self):
        return f"voronoi(A={self.A!r}, method={self.method!r})"

    def total(self, config):
        self._check(config)
        n = config.n
        vol_a = self.A.volume()
        if len(config) == 0:
            return FunctionalValue(0.0, -n * vol_a)
        in_a = np.flatnonzero(self.A.contains(config.points))
        if isinstance(self.method, Exact2D):
            raw = 0.0
            if len(in_a):
                raw = float(np.sum(voronoi_cell_areas(config, self.A, self.method, in_a)[:, 0]))
            return FunctionalValue(raw, n * (raw - vol_a))
        # the same quadrature nodes estimate vol(A), which cancels most of the noise
        nodes, label = _quadrature_labels(config, self.method)
        vol = config.window.volume()
        raw = float(vol * np.mean(np.isin(label, in_a)))
        vol_a_hat = float(vol * np.mean(self.A.contains(nodes)))
        return FunctionalValue(raw, n * (raw - vol_a_hat))

    def score(self, config, i):
        self._check(config)
        return config.n * voronoi_score(config, i, self.A, self.method)

    def empty_total(self, n):
        return -n * self.A.volume()

    def zero_tolerance(self, n):
        return 1e-10 * n * self.Y.volume()


def evaluate_total(model: ScoreModel, config: PointConfiguration) -> FunctionalValue:
    """``H_n`` of ``config`` (raw statistic and prefactor-scaled value)."""
    if config.scale_index is None:
        raise PreconditionError("evaluate_total needs a configuration with a scale index")
    return model.total(config)


def total_from_scores(model: ScoreModel, config: PointConfiguration) -> float:
    """``H_n`` recomputed as a plain sum of per-point scores, point by point."""
    if len(config) == 0:
        return model.empty_total(config.n)
    return float(sum(model.score(config, i) for i in range(len(config))))
