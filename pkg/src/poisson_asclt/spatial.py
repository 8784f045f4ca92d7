"""Uniform-grid spatial index and exact planar Voronoi cells.

Queries follow a deterministic order: ascending squared Euclidean distance,
ties broken by lexicographic comparison of coordinates and then by index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .domain import Ball, Box, HalfspacePolytope, PointConfiguration, Region
from .errors import PreconditionError, UnsupportedError

# refuse grids that would be mostly empty cells
_MAX_CELLS_PER_POINT = 64


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    """Points bucketed into a regular grid of cubes with edge ``cell_edge``.

    ``order[cell_start[c]:cell_start[c+1]]`` lists the indices stored in the
    cell with linear id ``c``.
    """

    config: PointConfiguration
    cell_edge: float
    origin: np.ndarray
    dims: np.ndarray
    strides: np.ndarray
    cell_start: np.ndarray
    order: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.config.points

    def bucket_sizes(self) -> np.ndarray:
        return np.diff(self.cell_start)

    def _args(self):
        return (self._pts, self.origin, self.cell_edge, self.dims, self.strides,
                self.cell_start, self.order)

    @property
    def _pts(self):
        pts = self.config.points
        return pts if pts.flags.c_contiguous else np.ascontiguousarray(pts)


def default_cell_edge(config: PointConfiguration) -> float:
    return (config.window.volume() / max(1, len(config))) ** (1.0 / config.dim)


def build_index(config: PointConfiguration, cell_edge: float | None = None) -> SpatialIndex:
    """Bucket every point of ``config`` into a uniform grid over its window."""
    if cell_edge is None:
        cell_edge = default_cell_edge(config)
    cell_edge = float(cell_edge)
    if not cell_edge > 0:
        raise PreconditionError("cell_edge must be positive")
    box = config.window.bounding_box()
    d = config.dim
    extent = box.upper - box.lower
    dims = np.maximum(1, np.ceil(extent / cell_edge)).astype(np.int64)
    ncell = int(np.prod(dims.astype(float)))
    if ncell > _MAX_CELLS_PER_POINT * max(len(config), 1) + 4096:
        raise PreconditionError(f"cell_edge {cell_edge} gives {ncell} cells for {len(config)} points")
    strides = np.ones(d, dtype=np.int64)
    for c in range(d - 2, -1, -1):
        strides[c] = strides[c + 1] * dims[c + 1]
    origin = np.ascontiguousarray(box.lower, dtype=float)
    pts = config.points
    if len(pts):
        cells = np.floor((pts - origin) / cell_edge).astype(np.int64)
        cells = np.clip(cells, 0, dims - 1)
        lin = cells @ strides
        order = np.argsort(lin, kind="stable").astype(np.int64)
        counts = np.bincount(lin, minlength=ncell)
    else:
        order = np.zeros(0, dtype=np.int64)
        counts = np.zeros(ncell, dtype=np.int64)
    cell_start = np.zeros(ncell + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    return SpatialIndex(config, cell_edge, origin, dims, strides, cell_start, order)


def _query_point(index: SpatialIndex, x) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1))
    if x.size != index.config.dim:
        raise PreconditionError("query point has the wrong dimension")
    return x


def knn_query(index: SpatialIndex, x, k: int, exclude_self: bool = False) -> np.ndarray:
    """Indices of the ``k`` nearest points to ``x``, nearest first.

    With ``exclude_self`` a point coinciding with ``x`` is skipped. The result
    is shorter than ``k`` only when the configuration has too few points.
    """
    if k < 1:
        raise PreconditionError("k must be at least 1")
    return K.knn_point(*index._args(), _query_point(index, x), int(k), -1, bool(exclude_self))


def knn_table(index: SpatialIndex, k: int) -> np.ndarray:
    """``(N, min(k, N-1))`` table of each point's nearest other points."""
    return K.knn_all(*index._args(), int(k))


def range_query(index: SpatialIndex, x, r: float) -> np.ndarray:
    """Sorted indices of the points in the closed ball ``B(x, r)``."""
    if r < 0:
        raise PreconditionError("radius must be non-negative")
    return K.range_point(*index._args(), _query_point(index, x), float(r))


def pairs_within(index: SpatialIndex, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(i, j)``, ``i < j``, of all pairs at distance ``<= r``."""
    return K.pairs_within(*index._args(), float(r))


def nearest_point(index: SpatialIndex, queries) -> np.ndarray:
    q = np.ascontiguousarray(np.asarray(queries, dtype=float).reshape(-1, index.config.dim))
    return K.nearest_all(*index._args(), q)


# ---------------------------------------------------------------------------
# brute force counterparts, used as oracles


def knn_scan(points, x, k: int, exclude_self: bool = False, skip: int = -1) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    d2 = np.zeros(len(pts))
    for c in range(pts.shape[1]):
        d2 += (pts[:, c] - x[c]) ** 2
    keep = np.ones(len(pts), dtype=bool)
    if skip >= 0:
        keep[skip] = False
    if exclude_self:
        keep &= d2 != 0.0
    idx = np.flatnonzero(keep)
    keys = [idx] + [pts[idx, c] for c in range(pts.shape[1] - 1, -1, -1)] + [d2[idx]]
    return idx[np.lexsort(keys)][:k]


def range_scan(points, x, r: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    d2 = np.zeros(len(pts))
    for c in range(pts.shape[1]):
        d2 += (pts[:, c] - x[c]) ** 2
    return np.flatnonzero(d2 <= r * r)


# ---------------------------------------------------------------------------
# Voronoi cells (d = 2)


@dataclass(frozen=True)
class CellPolygon:
    """Counterclockwise vertex list of one Voronoi cell clipped to the window."""

    vertices: np.ndarray
    nucleus: int

    def area(self) -> float:
        v = self.vertices
        return float(K.polygon_area(v[:, 0].copy(), v[:, 1].copy(), len(v))) if len(v) else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nucleus", "vertex", "x1", "x2"])
            for t, (a, b) in enumerate(self.vertices):
                w.writerow([self.nucleus, t, f"{a:.17g}", f"{b:.17g}"])


def _check_planar_box(config: PointConfiguration, window: Region) -> Box:
    if config.dim != 2:
        raise UnsupportedError("exact Voronoi cells are implemented for d = 2 only")
    if not isinstance(window, Box):
        raise UnsupportedError("Voronoi cells are clipped to box windows only")
    return window


def voronoi_cell_2d(config: PointConfiguration, i: int, window: Region | None = None,
                    index: SpatialIndex | None = None, prefilter: bool = True) -> CellPolygon:
    """Cell of nucleus ``i``: the window cut by all bisector half-planes.

    Bisectors are applied nearest neighbour first. ``prefilter=False`` applies
    every one of the ``N - 1`` bisectors; the default stops as soon as no
    further bisector can reach the polygon, which yields the same vertices.
    """
    box = _check_planar_box(config, config.window if window is None else window)
    n = len(config)
    if not 0 <= i < n:
        raise PreconditionError(f"point index {i} out of range")
    lo = np.ascontiguousarray(box.lower)
    hi = np.ascontiguousarray(box.upper)
    pts = np.ascontiguousarray(config.points)
    if prefilter:
        index = index or build_index(config)
        xs, ys = K.voronoi_cell(*index._args(), int(i), lo, hi)
    else:
        nbrs = knn_scan(pts, pts[i], n, skip=i).astype(np.int64)
        xs, ys, _, _ = K.clip_sequence(pts, int(i), nbrs, lo, hi, False)
    verts = np.column_stack([xs, ys])
    assert len(verts) >= 3, "empty Voronoi cell for a nucleus inside the window"
    return CellPolygon(verts, int(i))


def _region_codes(A: Region):
    empty_n = np.zeros((0, 2))
    empty_o = np.zeros(0)
    if A.dim != 2:
        raise UnsupportedError("planar Voronoi geometry needs a planar set A")
    if isinstance(A, Ball):
        return 1, np.ascontiguousarray(A.center), A.radius, empty_n, empty_o
    if isinstance(A, Box):
        normals = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
        offsets = np.array([-A.lower[0], A.upper[0], -A.lower[1], A.upper[1]])
        return 0, np.r_[A.lower, A.upper], 0.0, normals, offsets
    if isinstance(A, HalfspacePolytope):
        return 2, np.zeros(2), 0.0, np.ascontiguousarray(A.normals), np.ascontiguousarray(A.offsets)
    raise UnsupportedError(f"unsupported set {type(A).__name__}")


def voronoi_areas(config: PointConfiguration, A: Region, which=None,
                  index: SpatialIndex | None = None) -> np.ndarray:
    """Rows ``(area(C_i), area(C_i & A))`` for the nuclei listed in ``which``."""
    box = _check_planar_box(config, config.window)
    if which is None:
        which = np.arange(len(config), dtype=np.int64)
    which = np.ascontiguousarray(np.asarray(which, dtype=np.int64).reshape(-1))
    if len(which) == 0:
        return np.zeros((0, 2))
    index = index or build_index(config)
    kind, vec, scal, normals, offsets = _region_codes(A)
    return K.voronoi_areas(*index._args(), which, np.ascontiguousarray(box.lower),
                           np.ascontiguousarray(box.upper), kind, vec, scal, normals, offsets)


def polygon_intersection_area(polygon: CellPolygon, A: Region) -> float:
    """Area of ``polygon & A`` for a planar box, disk or half-space polytope."""
    kind, vec, scal, normals, offsets = _region_codes(A)
    xs = np.ascontiguousarray(polygon.vertices[:, 0])
    ys = np.ascontiguousarray(polygon.vertices[:, 1])
    if kind == 1:
        return float(K.polygon_disk_area(xs, ys, len(xs), vec[0], vec[1], scal))
    return float(K.polygon_halfspaces_area(xs, ys, len(xs), normals, offsets))


def cell_edge_for_radius(config: PointConfiguration, r: float) -> float:
    """Grid edge suited to fixed-radius searches: close to ``r`` but never too fine."""
    base = default_cell_edge(config)
    return max(r, base / 2.0) if r > 0 else base


def circumradius(polygon: CellPolygon, centre) -> float:
    return float(math.sqrt(np.max(np.sum((polygon.vertices - np.asarray(centre)) ** 2, axis=1))))
