"""Regions, point configurations and Poisson sampling.

The coupled family of processes used throughout the package is built from a
single intensity-one master realization ``eta`` by the dilation
``eta_n = n**(-1/d) * eta`` about the coordinate origin; see
:func:`restrict_scaled`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import CoverageError, DomainError, PreconditionError, UnsupportedError
from .rng import RngStream

# relative slack for region-in-region tests; containment of points stays exact
_CONTAIN_RTOL = 1e-12


def _as_vector(values, name="vector") -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be a nonempty finite vector")
    return arr


class Region:
    """A bounded, full-dimensional, convex subset of R^d."""

    dim: int

    def volume(self) -> float:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        """Closed containment test for an ``(N, d)`` array; returns bool mask."""
        raise NotImplementedError

    def bounding_box(self) -> "Box":
        raise NotImplementedError

    def scaled(self, factor: float) -> "Region":
        """Dilation about the coordinate origin."""
        raise NotImplementedError

    def translated(self, shift) -> "Region":
        raise NotImplementedError

    def anchor(self) -> np.ndarray:
        """A point inside the region used to move it onto the origin."""
        raise NotImplementedError

    def extreme_points(self) -> np.ndarray | None:
        """Finite set whose convex hull is the region, if one exists."""
        return None

    def contains_region(self, other: "Region") -> bool:
        if other.dim != self.dim:
            return False
        pts = other.extreme_points()
        if pts is not None:
            return bool(np.all(self._contains_slack(pts)))
        if isinstance(other, Ball):
            return self._contains_ball(other)
        raise UnsupportedError(f"containment of {type(other).__name__}")

    def _contains_slack(self, points) -> np.ndarray:
        raise NotImplementedError

    def _contains_ball(self, ball: "Ball") -> bool:
        raise NotImplementedError

    def _as_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1) if self.dim > 1 or pts.size == 1 else pts.reshape(-1, 1)
        if pts.shape[-1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got {pts.shape}")
        return pts


@dataclass(frozen=True)
class Box(Region):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower, "lower")
        hi = _as_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise DomainError("box bounds have different dimensions")
        if not np.all(lo < hi):
            raise DomainError(f"box needs lower < upper componentwise, got {lo} / {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash(("box", self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"box({_fmt(self.lower)}; {_fmt(self.upper)})"

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, points) -> np.ndarray:
        pts = self._as_points(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)

    def _contains_slack(self, points):
        pts = self._as_points(points)
        tol = _CONTAIN_RTOL * (1.0 + np.abs(pts))
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=-1)

    def _contains_ball(self, ball):
        tol = _CONTAIN_RTOL * (1.0 + np.abs(ball.center) + ball.radius)
        return bool(np.all(ball.center - ball.radius >= self.lower - tol)
                    and np.all(ball.center + ball.radius <= self.upper + tol))

    def bounding_box(self) -> "Box":
        return self

    def scaled(self, factor):
        return Box(self.lower * factor, self.upper * factor)

    def translated(self, shift):
        shift = _as_vector(shift)
        return Box(self.lower + shift, self.upper + shift)

    def anchor(self):
        return 0.5 * (self.lower + self.upper)

    def extreme_points(self):
        d = self.dim
        corners = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        return np.where(corners == 0, self.lower, self.upper)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))


@dataclass(frozen=True)
class Ball(Region):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = _as_vector(self.center, "center")
        c.setflags(write=False)
        r = float(self.radius)
        if not (r > 0 and math.isfinite(r)):
            raise DomainError(f"ball radius must be positive, got {r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.size

    def __eq__(self, other):
        return (isinstance(other, Ball) and np.array_equal(self.center, other.center)
                and self.radius == other.radius)

    def __hash__(self):
        return hash(("ball", self.center.tobytes(), self.radius))

    def __repr__(self):
        return f"ball({_fmt(self.center)}; {self.radius!r})"

    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d

    def contains(self, points) -> np.ndarray:
        pts = self._as_points(points)
        return np.sum((pts - self.center) ** 2, axis=-1) <= self.radius ** 2

    def _contains_slack(self, points):
        pts = self._as_points(points)
        dist = np.linalg.norm(pts - self.center, axis=-1)
        return dist <= self.radius * (1 + _CONTAIN_RTOL) + _CONTAIN_RTOL

    def _contains_ball(self, ball):
        gap = np.linalg.norm(ball.center - self.center) + ball.radius
        return bool(gap <= self.radius * (1 + _CONTAIN_RTOL) + _CONTAIN_RTOL)

    def bounding_box(self):
        return Box(self.center - self.radius, self.center + self.radius)

    def scaled(self, factor):
        return Ball(self.center * factor, self.radius * abs(factor))

    def translated(self, shift):
        return Ball(self.center + _as_vector(shift), self.radius)

    def anchor(self):
        return self.center.copy()


@dataclass(frozen=True, eq=False)
class HalfspacePolytope(Region):
    """Intersection of half-spaces ``normal . x <= offset``."""

    normals: np.ndarray
    offsets: np.ndarray
    _box: Box = field(init=False, repr=False)
    _interior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if a.shape[0] != b.size or not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
            raise DomainError("polytope needs one finite offset per normal")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", b)
        d = a.shape[1]
        # Chebyshev centre: nonempty interior iff the optimal radius is positive
        norms = np.linalg.norm(a, axis=1)
        res = linprog(np.r_[np.zeros(d), -1.0], A_ub=np.c_[a, norms], b_ub=b,
                      bounds=[(None, None)] * d + [(0, None)], method="highs")
        if res.status == 3:
            raise DomainError("polytope is unbounded")
        if res.status != 0 or res.x[-1] <= 1e-12:
            raise DomainError("polytope is empty or not full-dimensional")
        object.__setattr__(self, "_interior", res.x[:d])
        lo, hi = np.empty(d), np.empty(d)
        for i in range(d):
            c = np.zeros(d)
            for sign, store in ((1.0, lo), (-1.0, hi)):
                c[i] = sign
                r = linprog(c, A_ub=a, b_ub=b, bounds=[(None, None)] * d, method="highs")
                if r.status != 0:
                    raise DomainError("polytope is unbounded")
                store[i] = r.x[i]
        object.__setattr__(self, "_box", Box(lo, hi))

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def __eq__(self, other):
        return (isinstance(other, HalfspacePolytope) and np.array_equal(self.normals, other.normals)
                and np.array_equal(self.offsets, other.offsets))

    def __hash__(self):
        return hash(("poly", self.normals.tobytes(), self.offsets.tobytes()))

    def __repr__(self):
        rows = "; ".join(f"{_fmt(n)}, {float(o)!r}" for n, o in zip(self.normals, self.offsets))
        return f"polytope({rows})"

    def vertices(self) -> np.ndarray:
        from scipy.spatial import HalfspaceIntersection

        if self.dim == 1:
            return np.array([[self._box.lower[0]], [self._box.upper[0]]])
        hs = HalfspaceIntersection(np.c_[self.normals, -self.offsets], self._interior)
        return np.unique(np.round(hs.intersections, 14), axis=0)

    def extreme_points(self):
        if self.dim <= 3:
            return self.vertices()
        return None

    def volume(self) -> float:
        return volume_with_error(self)[0]

    def contains(self, points) -> np.ndarray:
        pts = self._as_points(points)
        return np.all(pts @ self.normals.T <= self.offsets, axis=-1)

    def _contains_slack(self, points):
        pts = self._as_points(points)
        tol = _CONTAIN_RTOL * (1.0 + np.abs(self.offsets))
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=-1)

    def _contains_ball(self, ball):
        reach = self.normals @ ball.center + ball.radius * np.linalg.norm(self.normals, axis=1)
        return bool(np.all(reach <= self.offsets + _CONTAIN_RTOL * (1 + np.abs(self.offsets))))

    def contains_region(self, other):
        if self.extreme_points() is None and other.extreme_points() is None and not isinstance(other, Ball):
            raise UnsupportedError("polytope containment for d > 3")
        return super().contains_region(other)

    def bounding_box(self):
        return self._box

    def scaled(self, factor):
        if factor <= 0:
            raise DomainError("polytope scaling factor must be positive")
        return HalfspacePolytope(self.normals, self.offsets * factor)

    def translated(self, shift):
        shift = _as_vector(shift)
        return HalfspacePolytope(self.normals, self.offsets + self.normals @ shift)

    def anchor(self):
        return self._interior.copy()


def _fmt(vec) -> str:
    return ",".join(repr(float(v)) for v in vec)


def volume(region: Region) -> float:
    """Lebesgue measure of ``region`` (exact except for polytopes in d > 3)."""
    return region.volume()


def volume_with_error(region: Region, samples: int = 200_000, seed: int = 0) -> tuple[float, float]:
    """Return ``(volume, standard_error)``; the error is zero for exact cases."""
    if not isinstance(region, HalfspacePolytope):
        return region.volume(), 0.0
    if region.dim == 1:
        return float(region._box.upper[0] - region._box.lower[0]), 0.0
    if region.dim <= 3:
        from scipy.spatial import ConvexHull

        return float(ConvexHull(region.vertices()).volume), 0.0
    box = region.bounding_box()
    pts = sample_uniform(box, samples, RngStream(seed, 0x766F6C))
    hit = region.contains(pts)
    frac = hit.mean()
    return box.volume() * frac, box.volume() * math.sqrt(frac * (1 - frac) / samples)


# ---------------------------------------------------------------------------
# distance targets


@dataclass(frozen=True)
class WholeRegion:
    region: Region

    def __repr__(self):
        return f"whole({self.region!r})"


@dataclass(frozen=True)
class Boundary:
    region: Region

    def __post_init__(self):
        if not isinstance(self.region, (Box, Ball)):
            raise UnsupportedError("boundary targets are supported for boxes and balls only")

    def __repr__(self):
        return f"boundary({self.region!r})"


DistanceTarget = WholeRegion | Boundary


def _distance_outside_box(pts, box):
    gap = np.maximum(np.maximum(box.lower - pts, pts - box.upper), 0.0)
    return np.sqrt(np.sum(gap ** 2, axis=-1))


def _distance_to_polytope(pts, poly):
    from scipy.optimize import minimize

    out = np.zeros(len(pts))
    inside = poly.contains(pts)
    cons = {"type": "ineq", "fun": lambda y: poly.offsets - poly.normals @ y,
            "jac": lambda y: -poly.normals}
    for i in np.flatnonzero(~inside):
        x = pts[i]
        res = minimize(lambda y: 0.5 * np.sum((y - x) ** 2), poly.anchor(), jac=lambda y: y - x,
                       constraints=[cons], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        out[i] = np.linalg.norm(res.x - x)
    return out


def distance_to_target(x, target: DistanceTarget):
    """Euclidean distance from point(s) ``x`` to ``target``.

    Accepts a single point (returns a float) or an ``(N, d)`` array.
    """
    region = target.region
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1 and (region.dim > 1 or arr.size == 1)
    pts = region._as_points(arr)
    if not np.all(np.isfinite(pts)):
        raise DomainError("distance requested for a non-finite point")
    if isinstance(target, WholeRegion):
        if isinstance(region, Box):
            out = _distance_outside_box(pts, region)
        elif isinstance(region, Ball):
            out = np.maximum(np.linalg.norm(pts - region.center, axis=-1) - region.radius, 0.0)
        else:
            out = _distance_to_polytope(pts, region)
    elif isinstance(region, Ball):
        out = np.abs(np.linalg.norm(pts - region.center, axis=-1) - region.radius)
    elif isinstance(region, Box):
        inside = region.contains(pts)
        depth = np.min(np.minimum(pts - region.lower, region.upper - pts), axis=-1)
        out = np.where(inside, depth, _distance_outside_box(pts, region))
    else:
        raise UnsupportedError("boundary of a half-space polytope")
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# point configurations


def _has_duplicates(pts: np.ndarray) -> bool:
    order = np.lexsort(pts.T[::-1])
    s = pts[order]
    return bool(np.any(np.all(s[1:] == s[:-1], axis=1)))


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """A finite simple point pattern living in ``window``.

    ``scale_index`` is ``None`` for an unscaled master realization.
    """

    points: np.ndarray
    window: Region
    scale_index: int | None = None
    master_seed: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        d = self.window.dim
        if pts.size == 0:
            pts = pts.reshape(0, d)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, d)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise DomainError(f"points must have shape (N, {d}), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("points must be finite")
        if len(pts) and not np.all(self.window.contains(pts)):
            raise DomainError("configuration has points outside its window")
        if len(pts) > 1 and _has_duplicates(pts):
            raise DomainError("duplicate points: the process must be simple")
        if self.scale_index is not None:
            n = int(self.scale_index)
            if n < 1:
                raise DomainError("scale index must be a positive integer")
            object.__setattr__(self, "scale_index", n)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def n(self) -> int:
        """Scale index, with the unscaled master treated as ``n = 1``."""
        return 1 if self.scale_index is None else self.scale_index

    def with_points(self, extra) -> "PointConfiguration":
        """Append points (kept in order after the existing ones)."""
        extra = np.asarray(extra, dtype=float).reshape(-1, self.dim)
        return PointConfiguration(np.vstack([self.points, extra]), self.window,
                                  self.scale_index, self.master_seed)

    def subset(self, index) -> "PointConfiguration":
        return PointConfiguration(self.points[index], self.window, self.scale_index, self.master_seed)

    def __eq__(self, other):
        return (isinstance(other, PointConfiguration) and self.window == other.window
                and self.scale_index == other.scale_index and np.array_equal(self.points, other.points))

    __hash__ = None


# ---------------------------------------------------------------------------
# sampling


def sample_uniform(region: Region, count: int, rng: RngStream) -> np.ndarray:
    """``count`` i.i.d. uniform points on ``region`` as an ``(count, d)`` array."""
    count = int(count)
    if count < 0:
        raise PreconditionError("count must be non-negative")
    return _uniform(region, count, rng.generator())


def _uniform(region: Region, count: int, gen: np.random.Generator) -> np.ndarray:
    box = region.bounding_box()
    d = region.dim
    width = box.upper - box.lower
    if isinstance(region, Box):
        return box.lower + width * gen.random((count, d))
    out = np.empty((count, d))
    filled = 0
    accept = max(region.volume() / box.volume(), 1e-3) if d <= 3 or isinstance(region, Ball) else 0.5
    while filled < count:
        need = count - filled
        batch = box.lower + width * gen.random((int(need / accept * 1.2) + 16, d))
        batch = batch[region.contains(batch)][:need]
        out[filled:filled + len(batch)] = batch
        filled += len(batch)
    return out


def sample_poisson(intensity: float, region: Region, rng: RngStream,
                   scale_index: int | None = None) -> PointConfiguration:
    """Homogeneous Poisson process of the given intensity restricted to ``region``."""
    intensity = float(intensity)
    if not (intensity >= 0 and math.isfinite(intensity)):
        raise DomainError("intensity must be a finite non-negative number")
    gen = rng.generator()
    count = int(gen.poisson(intensity * region.volume())) if intensity > 0 else 0
    pts = _uniform(region, count, gen)
    return PointConfiguration(pts, region, scale_index, rng.master_seed)


def master_window(Y: Region, n_max: int) -> Region:
    """Window ``n_max**(1/d) * Y`` that one master realization must cover."""
    return Y.scaled(int(n_max) ** (1.0 / Y.dim))


def sample_master(Y: Region, n_max: int, rng: RngStream) -> PointConfiguration:
    """Intensity-one master realization serving every scale ``n <= n_max``."""
    return sample_poisson(1.0, master_window(Y, n_max), rng)


def restrict_scaled(master: PointConfiguration, n: int, Y: Region,
                    return_index: bool = False):
    """Points of ``n**(-1/d) * master`` lying in ``Y``, tagged with scale ``n``.

    Raises :class:`CoverageError` if the master window does not contain
    ``n**(1/d) * Y``; nothing is ever silently truncated.
    """
    n = int(n)
    if n < 1:
        raise PreconditionError("scale index must be a positive integer")
    if Y.dim != master.dim:
        raise DomainError("dimension mismatch between master and Y")
    d = Y.dim
    grow = n ** (1.0 / d)
    if not master.window.contains_region(Y.scaled(grow)):
        raise CoverageError(f"master window {master.window!r} does not cover n^(1/d) Y for n={n}")
    scaled = master.points / grow if n > 1 else master.points
    keep = np.flatnonzero(Y.contains(scaled)) if len(scaled) else np.zeros(0, dtype=int)
    config = PointConfiguration(scaled[keep], Y, n, master.master_seed)
    return (config, keep) if return_index else config


def origin_anchored(Y: Region) -> tuple[Region, np.ndarray]:
    """Translate ``Y`` so that it contains the origin.

    Returns the (possibly) translated region and the applied shift; regions that
    already contain the origin are returned unchanged with a zero shift.
    """
    zero = np.zeros((1, Y.dim))
    if bool(Y.contains(zero)[0]):
        return Y, np.zeros(Y.dim)
    shift = -Y.anchor()
    return Y.translated(shift), shift


def region_from_corners(lower: Sequence[float], upper: Sequence[float]) -> Box:
    return Box(np.asarray(lower, float), np.asarray(upper, float))
