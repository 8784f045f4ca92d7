"""Coupled trajectories, moment calibration and logarithmic averaging.

A trajectory evaluates ``H_k`` for a schedule of scale indices ``k`` on one
master realization, so that ``F_1, F_2, ...`` are pathwise dependent exactly
as in the coupled family ``eta_k = k**(-1/d) eta``. The log-average measure
puts mass ``1/k`` on ``F_k``; it is reported self-normalized by
``W_n = sum 1/k`` and, for comparison, normalized by ``log n``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .domain import PointConfiguration, restrict_scaled, sample_master, sample_poisson
from .errors import (DegenerateModelError, DependencyError, PreconditionError, UnsupportedError)
from .functionals import ScoreModel, evaluate_total
from .records import write_csv
from .rng import RngStream

VARIANCE_FLOOR = 1e-12
MIN_CALIBRATION_REPS = 200


def ordered_map(fn: Callable, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# schedules and trajectories


@dataclass(frozen=True)
class Complete:
    """Every scale index ``1, 2, ..., n_max``."""

    def indices(self, n_max: int) -> np.ndarray:
        return np.arange(1, int(n_max) + 1)

    def __repr__(self):
        return "complete"


@dataclass(frozen=True)
class Strided:
    """Scale indices ``base, base + stride, ...`` up to ``n_max``."""

    base: int = 1
    stride: int = 10

    def __post_init__(self):
        if self.base < 1 or self.stride < 1:
            raise PreconditionError("strided schedule needs base >= 1 and stride >= 1")

    def indices(self, n_max: int) -> np.ndarray:
        return np.arange(self.base, int(n_max) + 1, self.stride)

    def __repr__(self):
        return f"strided(base={self.base}, stride={self.stride})"


@dataclass(frozen=True, eq=False)
class Trajectory:
    model_id: str
    master_seed: int
    schedule: np.ndarray
    H: np.ndarray
    F: np.ndarray | None = None

    def __post_init__(self):
        if len(self.schedule) == 0 or np.any(np.diff(self.schedule) <= 0):
            raise PreconditionError("schedule must be nonempty and strictly increasing")

    @property
    def is_complete(self) -> bool:
        return bool(self.schedule[0] == 1 and np.all(np.diff(self.schedule) == 1))

    def with_F(self, F) -> "Trajectory":
        return Trajectory(self.model_id, self.master_seed, self.schedule, self.H, np.asarray(F, dtype=float))

    def to_csv(self, path, header=None):
        F = self.F if self.F is not None else np.full(len(self.H), np.nan)
        return write_csv(path, ["k", "H", "F"], zip(self.schedule.tolist(), self.H, F), header)


def master_stream(master_seed: int) -> RngStream:
    return RngStream(master_seed).spawn("master")


def evaluate_schedule(model: ScoreModel, master: PointConfiguration, schedule) -> np.ndarray:
    return np.array([evaluate_total(model, restrict_scaled(master, int(k), model.Y)).standardized_H
                     for k in schedule])


def run_trajectory(model: ScoreModel, n_max: int, schedule_spec=Complete(), master_seed: int = 0) -> Trajectory:
    """Evaluate ``H_k`` along the schedule, all on one master realization."""
    if n_max < 1:
        raise PreconditionError("n_max must be at least 1")
    schedule = schedule_spec.indices(n_max)
    master = sample_master(model.Y, n_max, master_stream(master_seed))
    return Trajectory(model.model_id, int(master_seed), schedule, evaluate_schedule(model, master, schedule))


# ---------------------------------------------------------------------------
# calibration


def jackknife_variance_se(x) -> float:
    """Jackknife standard error of the sample variance (leave-one-out in closed form)."""
    x = np.asarray(x, dtype=float)
    N = len(x)
    c = x - x.mean()
    s1 = c.sum()
    s2 = np.sum(c * c)
    loo_mean = (s1 - c) / (N - 1)
    loo_var = (s2 - c * c - (N - 1) * loo_mean ** 2) / (N - 2)
    return float(math.sqrt((N - 1) / N * np.sum((loo_var - loo_var.mean()) ** 2)))


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """Moments of ``H_k`` on a grid of ``k`` with a fitted power law for the variance.

    Inside the grid range the mean is interpolated linearly in ``k`` and
    the variance as a power law between neighbouring grid points, so grid
    values are reproduced exactly. Outside the range there is no extrapolation.
    """

    model_id: str
    ks: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    reps: np.ndarray
    se_mean: np.ndarray
    se_var: np.ndarray
    tau_hat: float
    log_multiplier: float
    mean_fit: tuple = ()
    exact: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("ks", "mean", "var", "reps", "se_mean", "se_var"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.ks) <= 0):
            raise PreconditionError("calibration grid must be increasing")
        if not np.all(self.var > 0):
            raise DegenerateModelError("calibration variance must be positive at every grid point")

    def _locate(self, k):
        k = np.asarray(k, dtype=float)
        if np.any(k < self.ks[0]) or np.any(k > self.ks[-1]):
            raise DependencyError(f"calibration covers k in [{self.ks[0]:g}, {self.ks[-1]:g}] only")
        return k

    def mean_at(self, k):
        k = self._locate(k)
        return np.interp(k, self.ks, self.mean)

    def variance(self, k):
        k = self._locate(k)
        j = np.clip(np.searchsorted(self.ks, k, side="right") - 1, 0, len(self.ks) - 2) if len(self.ks) > 1 else 0
        if len(self.ks) == 1:
            return np.broadcast_to(self.var[0], k.shape).copy() if k.ndim else float(self.var[0])
        k0, k1 = self.ks[j], self.ks[j + 1]
        v0, v1 = self.var[j], self.var[j + 1]
        slope = np.log(v1 / v0) / np.log(k1 / k0)
        out = v0 * (k / k0) ** slope
        # grid points come back exactly
        out = np.where(k == k0, v0, np.where(k == k1, v1, out))
        return out if out.ndim else float(out)

    def power_law(self, k):
        """Global fit ``exp(b) * k**tau_hat``."""
        return math.exp(self.log_multiplier) * np.asarray(k, dtype=float) ** self.tau_hat

    def to_dict(self) -> dict:
        return {
            "model": self.model_id,
            "entries": [
                {"k": float(k), "mean": float(m), "variance": float(v), "reps": int(r),
                 "se_mean": float(sm), "se_var": float(sv)}
                for k, m, v, r, sm, sv in zip(self.ks, self.mean, self.var, self.reps, self.se_mean, self.se_var)
            ],
            "fit": {"tau_hat": self.tau_hat, "log_multiplier": self.log_multiplier,
                    "mean_fit": list(self.mean_fit)},
            "exact": self.exact,
            "meta": self.meta,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationTable":
        e = data["entries"]
        col = lambda key: [row[key] for row in e]
        fit = data["fit"]
        return cls(data["model"], col("k"), col("mean"), col("variance"), col("reps"), col("se_mean"),
                   col("se_var"), fit["tau_hat"], fit["log_multiplier"], tuple(fit.get("mean_fit", ())),
                   data.get("exact", False), data.get("meta", {}))

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        path = Path(path)
        if not path.exists():
            raise DependencyError(f"calibration file {path} not found")
        return cls.from_dict(json.loads(path.read_text()))


def _fit_power_law(ks, var):
    slope, intercept = np.polyfit(np.log(ks), np.log(var), 1)
    return float(slope), float(intercept)


def sample_H(model: ScoreModel, k: int, rng: RngStream) -> float:
    """``H_k`` on one independent realization of ``eta_k & Y``."""
    return evaluate_total(model, sample_poisson(k, model.Y, rng, scale_index=k)).standardized_H


def calibrate(model: ScoreModel, k_grid: Sequence[int], reps: int = 500, rng: RngStream = RngStream(0),
              threads: int = 1, check: bool = True) -> CalibrationTable:
    """Mean and variance of ``H_k`` from ``reps`` independent replications per grid point.

    Standard errors are jackknife estimates. ``log Var`` is fitted against
    ``log k`` by least squares (slope ``tau_hat``). With ``check=False`` the
    grid size and replication floors are not enforced (for quick experiments).
    """
    ks = np.asarray(k_grid, dtype=int)
    if np.any(np.diff(ks) <= 0) or ks[0] < 1:
        raise PreconditionError("k_grid must be increasing positive integers")
    if check:
        if reps < MIN_CALIBRATION_REPS:
            raise PreconditionError(f"calibration needs reps >= {MIN_CALIBRATION_REPS}")
        if len(ks) < 4 or ks[-1] < 8 * ks[0]:
            raise PreconditionError("k_grid needs at least 4 points spanning a factor of 8")
    means, variances, se_m, se_v = [], [], [], []
    for k in ks:
        values = np.array(ordered_map(lambda r: sample_H(model, int(k), rng.spawn("calibrate", int(k), r)),
                                      range(reps), threads))
        v = float(np.var(values, ddof=1))
        if not v > 0:
            raise DegenerateModelError(f"zero sample variance of H_{k}: the functional looks deterministic")
        means.append(float(values.mean()))
        variances.append(v)
        se_m.append(float(values.std(ddof=1) / math.sqrt(reps)))
        se_v.append(jackknife_variance_se(values))
    tau, b = _fit_power_law(ks, variances) if len(ks) > 1 else (float("nan"), math.log(variances[0]))
    mean_fit = tuple(float(c) for c in np.polyfit(ks, means, 1)) if len(ks) > 1 else ()
    return CalibrationTable(model.model_id, ks, means, variances, np.full(len(ks), reps), se_m, se_v,
                            tau, b, mean_fit, False, {"seed": rng.master_seed})


def exact_table(model: ScoreModel, k_max: int, k_min: int = 1) -> CalibrationTable:
    """Table built from closed-form moments on a doubling grid covering ``[k_min, k_max]``."""
    ks = sorted({*np.unique(np.geomspace(k_min, k_max, max(2, int(math.log2(k_max / k_min)) + 2)).round()), k_min, k_max})
    ks = np.array(ks, dtype=float)
    moments = [model.exact_moments(int(k)) for k in ks]
    if any(m is None for m in moments):
        raise DependencyError(f"{model.model_id} has no closed-form moments")
    mean = np.array([m[0] for m in moments])
    var = np.array([m[1] for m in moments])
    if not np.all(var > 0):
        raise DegenerateModelError(f"{model.model_id} has zero variance")
    tau, b = _fit_power_law(ks, var)
    zeros = np.zeros(len(ks))
    return CalibrationTable(model.model_id, ks, mean, var, zeros, zeros, zeros, tau, b,
                            tuple(np.polyfit(ks, mean, 1)), True)


def standardize(trajectory: Trajectory, table: CalibrationTable) -> Trajectory:
    """Fill ``F_k = (H_k - mean(k)) / sqrt(var(k))``."""
    ks = trajectory.schedule.astype(float)
    var = np.asarray(table.variance(ks), dtype=float)
    if np.any(var < VARIANCE_FLOOR):
        raise DegenerateModelError("interpolated variance below the positivity floor")
    return trajectory.with_F((trajectory.H - table.mean_at(ks)) / np.sqrt(var))


# ---------------------------------------------------------------------------
# log-average measure


@dataclass(frozen=True, eq=False)
class LogAverageMeasure:
    values: np.ndarray
    weights: np.ndarray
    total_weight: float
    n: int

    @property
    def unnormalized_mass(self) -> float:
        """``W_n / log n``, the mass of the measure normalized by ``log n``."""
        return self.total_weight / math.log(self.n)

    def integrate(self, f) -> float:
        """``int f d mu`` for the self-normalized measure."""
        return float(np.sum(self.weights * f(self.values)) / self.total_weight)

    def integrate_unnormalized(self, f) -> float:
        """``(1/log n) sum (1/k) f(F_k)``."""
        return float(np.sum(self.weights * f(self.values)) / math.log(self.n))


def log_average_measure(trajectory: Trajectory, n: int) -> LogAverageMeasure:
    if n < 2:
        raise PreconditionError("the log-average needs n >= 2")
    if trajectory.F is None:
        raise PreconditionError("trajectory is not standardized")
    mask = trajectory.schedule <= n
    if not np.any(trajectory.schedule == n):
        raise PreconditionError(f"n={n} is not in the schedule")
    ks = trajectory.schedule[mask].astype(float)
    w = 1.0 / ks
    return LogAverageMeasure(trajectory.F[mask].copy(), w, float(np.sum(w)), int(n))


def ks_to_normal(measure: LogAverageMeasure) -> float:
    """``sup_x |G(x) - Phi(x)|`` for the self-normalized weighted ECDF ``G``.

    The supremum of a step function against a continuous CDF is attained at
    an atom, from the left or from the right, so both one-sided limits are
    checked at every distinct atom.
    """
    if len(measure.values) == 0:
        raise PreconditionError("empty measure")
    order = np.argsort(measure.values, kind="stable")
    v = measure.values[order]
    w = measure.weights[order] / measure.total_weight
    distinct, start = np.unique(v, return_index=True)
    cum = np.cumsum(w)
    right = np.append(cum[start[1:] - 1], 1.0)
    left = np.concatenate([[0.0], cum[start[1:] - 1]])
    phi = ndtr(distinct)
    right = np.minimum(right, 1.0)
    return float(min(1.0, max(np.max(np.abs(right - phi)), np.max(np.abs(left - phi)))))


def weighted_ecdf(measure: LogAverageMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Distinct atom values and the ECDF (right limit) at them."""
    order = np.argsort(measure.values, kind="stable")
    v = measure.values[order]
    cum = np.cumsum(measure.weights[order]) / measure.total_weight
    distinct, idx = np.unique(v, return_index=True)
    last = np.append(idx[1:] - 1, len(v) - 1)
    return distinct, np.minimum(cum[last], 1.0)


def delta_n(trajectory: Trajectory, n: int, t: float) -> complex:
    """``(1/log n) sum_{k<=n} (1/k)(exp(i t F_k) - exp(-t^2/2))``."""
    if n < 2:
        raise PreconditionError("delta_n needs n >= 2")
    if not trajectory.is_complete:
        raise UnsupportedError("delta_n needs a complete schedule")
    if trajectory.schedule[-1] < n:
        raise PreconditionError(f"trajectory stops before n={n}")
    if trajectory.F is None:
        raise PreconditionError("trajectory is not standardized")
    F = trajectory.F[:n]
    w = 1.0 / np.arange(1, n + 1)
    s = np.sum(w * (np.exp(1j * t * F) - math.exp(-t * t / 2)))
    return complex(s / math.log(n))


def _delta_path(F: np.ndarray, t: float, ns: np.ndarray) -> np.ndarray:
    # Delta_n(t) for every n in ns from one cumulative sum
    k = np.arange(1, len(F) + 1)
    terms = (np.exp(1j * t * F) - math.exp(-t * t / 2)) / k
    return np.cumsum(terms)[ns - 1] / np.log(ns)


def il_subgrid(n_max: int, points: int = 20, n_min: int = 10) -> np.ndarray:
    return np.unique(np.round(np.geomspace(n_min, n_max, points)).astype(int))


@dataclass(frozen=True)
class ILRow:
    n: int
    t: float
    mean_sq: float
    se: float
    partial_sum: float


def il_diagnostic(model: ScoreModel, n_max: int, t_grid: Sequence[float], trajectories: int,
                  rng: RngStream = RngStream(0), table: CalibrationTable | None = None,
                  n_grid: Sequence[int] | None = None, threads: int = 1) -> list[ILRow]:
    """Mean of ``|Delta_n(t)|^2`` over independent trajectories.

    ``partial_sum`` at ``n`` is a trapezoidal approximation, in ``log n``, of
    ``sum_{m <= n} E|Delta_m|^2 / (m log m)`` over the subgrid; it is
    indicative only.
    """
    if trajectories < 50:
        raise PreconditionError("il_diagnostic needs at least 50 trajectories")
    if table is None:
        table = exact_table(model, n_max)
    ns = np.asarray(n_grid if n_grid is not None else il_subgrid(n_max), dtype=int)
    if ns[0] < 2 or ns[-1] > n_max:
        raise PreconditionError("subgrid must lie in [2, n_max]")
    seeds = trajectory_seeds(rng, trajectories)

    def one(seed):
        tr = standardize(run_trajectory(model, n_max, Complete(), seed), table)
        return np.array([np.abs(_delta_path(tr.F, t, ns)) ** 2 for t in t_grid])

    sq = np.stack(ordered_map(one, seeds, threads))  # (R, T, len(ns))
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(trajectories)
    rows = []
    logn = np.log(ns)
    for a, t in enumerate(t_grid):
        g = mean[a] / logn
        partial = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(logn))])
        rows += [ILRow(int(n), float(t), float(m), float(s), float(p))
                 for n, m, s, p in zip(ns, mean[a], se[a], partial)]
    return rows


def trajectory_seeds(rng: RngStream, count: int) -> list[int]:
    """Independent master seeds derived from one stream."""
    return [int(s) for s in rng.spawn("trajectory-seeds").generator().integers(0, 2**63 - 1, size=count)]


# ---------------------------------------------------------------------------
# output


def asclt_rows(trajectory: Trajectory, ns: Sequence[int]):
    """``(n, W_n, ks, unnormalized_mass)`` at each requested ``n``."""
    rows = []
    for n in ns:
        m = log_average_measure(trajectory, int(n))
        rows.append((int(n), m.total_weight, ks_to_normal(m), m.unnormalized_mass))
    return rows


def write_asclt_csv(path, rows, header=None):
    return write_csv(path, ["n", "W_n", "ks", "unnormalized_mass"], rows, header)


def write_il_csv(path, rows: Sequence[ILRow], header=None):
    return write_csv(path, ["n", "t", "mean_sq", "se", "partial_sum"],
                     [(r.n, r.t, r.mean_sq, r.se, r.partial_sum) for r in rows], header)
