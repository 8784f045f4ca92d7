"""Monte Carlo estimators for the quantities controlling the normal approximation.

All integrals over ``R^d`` are reduced to integrals over ``Y``: a point
outside ``Y`` never changes ``H_n``, so every difference operator vanishes
there. An integral ``int_{R^d} g(x) dx`` in the unscaled coordinates of the
master process becomes ``n * vol(Y) * E[g(n**(1/d) X)]`` with ``X`` uniform
on ``Y``, which is what the estimators below compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import (Ball, Region, WholeRegion, distance_to_target, sample_poisson, sample_uniform)
from .errors import DegenerateModelError, DependencyError, PreconditionError
from .functionals import ScoreModel, evaluate_total
from .malliavin import is_nonzero, wilson_interval
from .records import write_csv
from .rng import RngStream

MIN_INNER_REPS = 30


@dataclass(frozen=True)
class BoundConfig:
    """Exponents and Monte Carlo budget.

    ``p`` and ``q`` default to ``p_dprime``. ``c_pprime`` and ``alpha`` are the
    decay constants of the model, which are inputs rather than known values.
    ``local_scale`` is the radius, in units of ``n**(-1/d)``, of the ball
    around ``x`` from which half of the ``psi`` nodes are drawn.
    """

    p_dprime: float = 0.5
    c_pprime: float = 1.0
    alpha: float = 1.0
    p: float | None = None
    q: float | None = None
    outer_samples: int = 200
    inner_reps: int = 100
    p_prime: float = 1.0
    local_scale: float = 2.0

    def __post_init__(self):
        if self.p is None:
            object.__setattr__(self, "p", self.p_dprime)
        if self.q is None:
            object.__setattr__(self, "q", self.p_dprime)
        if not 0 < self.p_dprime < 1:
            raise PreconditionError("p_dprime must lie in (0, 1)")
        if not self.p_dprime < self.p_prime:
            raise PreconditionError("p_dprime must be smaller than p_prime")
        for name in ("c_pprime", "alpha", "p", "q"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if not self.local_scale > 0:
            raise PreconditionError("local_scale must be positive")
        if self.outer_samples < 1 or self.inner_reps < 1:
            raise PreconditionError("sample sizes must be positive")

    @property
    def beta_small(self) -> float:
        return self.q / (4 * (4 + self.q))

    @property
    def beta_large(self) -> float:
        return self.q / (2 * (4 + self.q))


@dataclass(frozen=True)
class BoundEstimate:
    """Point estimate with its Monte Carlo standard error.

    ``bias_bound`` is the first-order size of the plug-in bias from raising
    estimated probabilities to a power below one.
    """

    value: float
    standard_error: float
    samples_used: int
    bias_bound: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)


# ---------------------------------------------------------------------------
# helpers


def variance_of(model: ScoreModel, n: int, table=None) -> float:
    """``Var(H_n)`` from the model's closed form or else from a calibration table."""
    exact = model.exact_moments(n)
    if exact is not None:
        var = float(exact[1])
    elif table is None:
        raise DependencyError(f"no calibration available for {model.model_id}")
    else:
        var = float(table.variance(n))
    if not var > 0:
        raise DegenerateModelError(f"Var(H_{n}) = {var} is not positive")
    return var


def _check_inner(cfg: BoundConfig):
    if cfg.inner_reps < MIN_INNER_REPS:
        raise PreconditionError(f"inner_reps must be at least {MIN_INNER_REPS}")


def _fresh(model: ScoreModel, n: int, rng: RngStream):
    return sample_poisson(n, model.Y, rng, scale_index=n)


def _h(model, config) -> float:
    return evaluate_total(model, config).standardized_H


def _append(config, pts):
    return config.with_points(np.asarray(pts, dtype=float).reshape(-1, config.dim))


def prob_first_nonzero(model: ScoreModel, n: int, x, reps: int, rng: RngStream) -> float:
    """Fraction of fresh realizations with ``D_x H_n != 0``."""
    hits = 0
    for rep in range(reps):
        c = _fresh(model, n, rng.spawn("D1", rep))
        if is_nonzero(model, _h(model, _append(c, x)) - _h(model, c), n):
            hits += 1
    return hits / reps


def prob_second_nonzero(model: ScoreModel, n: int, x1, x, reps: int, rng: RngStream) -> float:
    """Fraction of fresh realizations with ``D^2_{x1,x} H_n != 0``."""
    hits = 0
    pair = np.vstack([x1, x])
    for rep in range(reps):
        c = _fresh(model, n, rng.spawn("D2", rep))
        d2 = (_h(model, _append(c, pair)) + _h(model, c)) - (_h(model, _append(c, x1)) + _h(model, _append(c, x)))
        if is_nonzero(model, d2, n):
            hits += 1
    return hits / reps


def _plugin_bias(p_hats, reps, beta, scale) -> float:
    # beta * se / p^(1 - beta), averaged over the nodes with p > 0
    p = np.asarray(p_hats, dtype=float)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), p.shape)
    pos = p > 0
    if not np.any(pos) or beta >= 1:
        return 0.0
    se = np.sqrt(p[pos] * (1 - p[pos]) / reps)
    return float(np.sum(scale[pos] * beta * se / p[pos] ** (1 - beta)) / len(p))


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _outer_nodes(model: ScoreModel, count: int, rng: RngStream, tag: str) -> np.ndarray:
    return sample_uniform(model.Y, count, rng.spawn("outer", tag))


# ---------------------------------------------------------------------------
# I_{K,n}


def decay_weight(dist, n: int, d: int, cfg: BoundConfig) -> np.ndarray:
    """``exp(-p'' c_{p'} n^{alpha/d} dist^alpha / (2^{2 alpha + 3} (4 + p'')))``."""
    a = cfg.alpha
    coef = cfg.p_dprime * cfg.c_pprime * n ** (a / d) / (2 ** (2 * a + 3) * (4 + cfg.p_dprime))
    return np.exp(-coef * np.asarray(dist, dtype=float) ** a)


def compute_IKn(Y: Region, K, n: int, cfg: BoundConfig, quad_points: int = 100_000,
                rng: RngStream = RngStream(0)) -> BoundEstimate:
    """``n * int_Y w(x) dx`` with ``w`` the decay weight of the distance to ``K``.

    For ``K = WholeRegion(Y)`` the weight is identically one and the exact
    value ``n * vol(Y)`` is returned.
    """
    if quad_points < 1000:
        raise PreconditionError("quad_points must be at least 1000")
    vol = Y.volume()
    if isinstance(K, WholeRegion) and K.region == Y:
        return BoundEstimate(n * vol, 0.0, 0)
    nodes = sample_uniform(Y, quad_points, rng.spawn("IKn", n))
    w = decay_weight(distance_to_target(nodes, K), n, Y.dim, cfg)
    m, se = _mean_se(w)
    return BoundEstimate(n * vol * m, n * vol * se, quad_points)


# ---------------------------------------------------------------------------
# psi, Gamma_1, Gamma_2


def _psi_nodes(model, n, x, count, local_scale, rng):
    """Nodes and importance weights for ``int_Y g(x1) dx1``.

    Half of the nodes are uniform on ``Y`` and half uniform on the ball
    ``B(x, local_scale * n**(-1/d))``; with the mixture density ``q`` the
    weight ``1_Y / q`` keeps the estimate unbiased whatever the integrand,
    while concentrating effort where second differences live.
    """
    d = model.Y.dim
    rho = local_scale * n ** (-1.0 / d)
    ball = Ball(x, rho)
    half = count // 2
    nodes = np.vstack([sample_uniform(model.Y, count - half, rng.spawn("outer", "psi-global")),
                       sample_uniform(ball, half, rng.spawn("outer", "psi-local"))])
    inside = model.Y.contains(nodes)
    share = (count - half) / count
    q = share * inside / model.Y.volume() + (1 - share) * ball.contains(nodes) / ball.volume()
    weight = np.where(inside, 1.0 / q, 0.0)
    return nodes, weight


def _psi_raw(model, n, x, betas, cfg, rng):
    """Per-node integrands ``n w(x1) p_hat^beta`` for each beta, and the ``p_hat``.

    The mean of each returned array estimates ``psi_x`` in unscaled coordinates.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if not bool(model.Y.contains(x[None, :])[0]):
        raise PreconditionError("x must lie in Y")
    nodes, weight = _psi_nodes(model, n, x, cfg.outer_samples, cfg.local_scale, rng)
    p_hats = np.array([prob_second_nonzero(model, n, x1, x, cfg.inner_reps, rng.spawn("node", j)) if w > 0 else 0.0
                       for j, (x1, w) in enumerate(zip(nodes, weight))])
    vals = [n * weight * np.where(p_hats > 0, p_hats, 0.0) ** b for b in betas]
    return vals, p_hats, n * weight


def estimate_psi(model: ScoreModel, n: int, x, beta: float, cfg: BoundConfig,
                 rng: RngStream = RngStream(0)) -> BoundEstimate:
    """``psi_x = int P(D^2_{x1,x} H_n != 0)^beta dx1`` in unscaled coordinates.

    Zero plug-in probabilities contribute zero. The bias bound is reported
    separately and not subtracted.
    """
    _check_inner(cfg)
    if not beta > 0:
        raise PreconditionError("beta must be positive")
    (vals,), p_hats, scale = _psi_raw(model, n, x, [beta], cfg, rng)
    m, se = _mean_se(vals)
    centre, half = wilson_interval(0, cfg.inner_reps)
    upper = centre + half
    return BoundEstimate(m, se, cfg.outer_samples * cfg.inner_reps,
                         _plugin_bias(p_hats, cfg.inner_reps, beta, scale),
                         {"zero_nodes": int(np.sum(p_hats == 0)), "wilson_upper_at_zero": upper})


def estimate_gamma2(model: ScoreModel, n: int, cfg: BoundConfig, rng: RngStream = RngStream(0),
                    table=None) -> BoundEstimate:
    """``Var(H_n)^{-3/2} int P(D_x H_n != 0)^{(1+p)/(4+p)} dx``."""
    _check_inner(cfg)
    var = variance_of(model, n, table)
    beta = (1 + cfg.p) / (4 + cfg.p)
    scale = n * model.Y.volume()
    nodes = _outer_nodes(model, cfg.outer_samples, rng, "gamma2")
    p_hats = np.array([prob_first_nonzero(model, n, x, cfg.inner_reps, rng.spawn("node", j))
                       for j, x in enumerate(nodes)])
    m, se = _mean_se(scale * p_hats ** beta)
    norm = var ** 1.5
    return BoundEstimate(m / norm, se / norm, cfg.outer_samples * cfg.inner_reps,
                         _plugin_bias(p_hats, cfg.inner_reps, beta, scale) / norm)


def estimate_gamma1(model: ScoreModel, n: int, cfg: BoundConfig, rng: RngStream = RngStream(0),
                    table=None) -> BoundEstimate:
    """``Var(H_n)^{-1} sqrt(int psi_x(b1)^2 dx + int psi_x(b2)^2 dx)``.

    ``b1 = q/(4(4+q))`` and ``b2 = q/(2(4+q))``. The cost is
    ``outer_samples**2 * inner_reps`` second differences (heavy).
    """
    _check_inner(cfg)
    var = variance_of(model, n, table)
    scale = n * model.Y.volume()
    outer = _outer_nodes(model, cfg.outer_samples, rng, "gamma1")
    terms = np.empty(len(outer))
    for j, x in enumerate(outer):
        (v1, v2), _, _ = _psi_raw(model, n, x, [cfg.beta_small, cfg.beta_large], cfg, rng.spawn("x", j))
        terms[j] = scale * (np.mean(v1) ** 2 + np.mean(v2) ** 2)
    s, s_se = _mean_se(terms)
    value = math.sqrt(s) / var
    se = s_se / (2 * math.sqrt(s) * var) if s > 0 else 0.0
    return BoundEstimate(value, se, cfg.outer_samples ** 2 * cfg.inner_reps, 0.0, {"heavy": True})


# ---------------------------------------------------------------------------
# cross-index quantities


def _common_nodes(model, n1, n2, count, rng, tag):
    """Nodes for an integral over the smaller unscaled window ``n_small^{1/d} Y``.

    Returns the node positions at both scales and the volume factor.
    """
    small, large = (n1, n2) if n1 <= n2 else (n2, n1)
    d = model.Y.dim
    base = _outer_nodes(model, count, rng, tag)
    at_small = base
    at_large = (small / large) ** (1.0 / d) * base
    return (at_small, at_large) if n1 <= n2 else (at_large, at_small), small * model.Y.volume()


def estimate_theta(model: ScoreModel, n1: int, n2: int, cfg: BoundConfig,
                   rng: RngStream = RngStream(0), table=None) -> BoundEstimate:
    """``(Var H_{n1} Var H_{n2})^{-1/2} int P(D H_{n1} != 0)^a P(D H_{n2} != 0)^a``.

    ``a = p/(4(4+p))``. The integral runs over unscaled positions ``u``; only
    ``u`` inside the smaller window ``min(n1,n2)^{1/d} Y`` can contribute for
    both indices (the regions scale about the origin, so the smaller window
    is nested in the larger one). The two probabilities use independent
    realizations.
    """
    _check_inner(cfg)
    norm = math.sqrt(variance_of(model, n1, table) * variance_of(model, n2, table))
    a = cfg.p / (4 * (4 + cfg.p))
    (x1s, x2s), factor = _common_nodes(model, n1, n2, cfg.outer_samples, rng, "theta")
    vals = np.empty(len(x1s))
    for j, (xa, xb) in enumerate(zip(x1s, x2s)):
        pa = prob_first_nonzero(model, n1, xa, cfg.inner_reps, rng.spawn("n1", j))
        pb = prob_first_nonzero(model, n2, xb, cfg.inner_reps, rng.spawn("n2", j))
        vals[j] = factor * (pa * pb) ** a
    m, se = _mean_se(vals)
    return BoundEstimate(m / norm, se / norm, 2 * cfg.outer_samples * cfg.inner_reps)


def estimate_lambda(model: ScoreModel, ns: Sequence[int], cfg: BoundConfig,
                    rng: RngStream = RngStream(0), table=None) -> BoundEstimate:
    """Generic ``Lambda(H_{n1}, H_{n2}, H_{n3}, H_{n4})``.

    ``Lambda^2 = prod Var(H_ni)^{-1/2} int psi_u(H_n1, b) psi_u(H_n2, b) du``
    with ``b = q/(4(4+q))``; only the first two indices enter the integral.
    """
    _check_inner(cfg)
    ns = [int(v) for v in ns]
    if len(ns) != 4:
        raise PreconditionError("Lambda needs four scale indices")
    norm = math.prod(math.sqrt(variance_of(model, v, table)) for v in ns)
    n1, n2 = ns[0], ns[1]
    (x1s, x2s), factor = _common_nodes(model, n1, n2, cfg.outer_samples, rng, "lambda")
    vals = np.empty(len(x1s))
    b = cfg.beta_small
    for j, (xa, xb) in enumerate(zip(x1s, x2s)):
        (va,), _, _ = _psi_raw(model, n1, xa, [b], cfg, rng.spawn("n1", j))
        (vb,), _, _ = _psi_raw(model, n2, xb, [b], cfg, rng.spawn("n2", j))
        vals[j] = factor * np.mean(va) * np.mean(vb)
    m, se = _mean_se(vals)
    value = math.sqrt(m / norm)
    se = se / (2 * math.sqrt(m * norm)) if m > 0 else 0.0
    return BoundEstimate(value, se, 2 * cfg.outer_samples ** 2 * cfg.inner_reps)


# ---------------------------------------------------------------------------
# characteristic-function gap


def cf_gap(F_samples, t: float) -> float:
    """``|mean(exp(i t F)) - exp(-t^2/2)|``."""
    F = np.asarray(F_samples, dtype=float).reshape(-1)
    if len(F) < 100:
        raise PreconditionError("cf_gap needs at least 100 samples")
    phi = complex(np.mean(np.cos(t * F)), np.mean(np.sin(t * F)))
    return abs(phi - math.exp(-t * t / 2))


def cf_gap_se(F_samples, t: float) -> float:
    """Standard error of the empirical characteristic function at ``t``."""
    F = np.asarray(F_samples, dtype=float).reshape(-1)
    return math.sqrt((np.var(np.cos(t * F), ddof=1) + np.var(np.sin(t * F), ddof=1)) / len(F))


@dataclass(frozen=True)
class GaussianBoundCheck:
    t: float
    lhs: float
    rhs: float
    combined_se: float
    slack: float
    passed: bool
    budget: dict


def gaussian_bound_check(F_samples, t: float, gamma1: BoundEstimate, gamma2: BoundEstimate,
                         slack_ses: float = 5.0) -> GaussianBoundCheck:
    """One-sided test of ``gap(t) <= t^2(|1 - V| + g1) + t^3 g2 / sqrt 2``.

    ``V`` is the sample variance of ``F_samples``. The combined standard
    error adds the errors of every term in quadrature; the check passes when
    the gap is below the bound plus ``slack_ses`` combined errors.
    """
    F = np.asarray(F_samples, dtype=float).reshape(-1)
    N = len(F)
    lhs = cf_gap(F, t)
    V = float(np.var(F, ddof=1))
    c = F - F.mean()
    se_V = math.sqrt(max(np.mean(c ** 4) - V * V, 0.0) / N)
    t2, t3 = t * t, abs(t) ** 3
    rhs = t2 * (abs(1 - V) + gamma1.value) + t3 * gamma2.value / math.sqrt(2)
    parts = {
        "cf": cf_gap_se(F, t),
        "variance": t2 * se_V,
        "gamma1": t2 * gamma1.standard_error,
        "gamma2": t3 * gamma2.standard_error / math.sqrt(2),
    }
    combined = math.sqrt(sum(v * v for v in parts.values()))
    budget = {"V_hat": V, "gamma1": gamma1.value, "gamma2": gamma2.value, **{f"se_{k}": v for k, v in parts.items()}}
    return GaussianBoundCheck(t, lhs, rhs, combined, slack_ses, lhs <= rhs + slack_ses * combined, budget)


def write_bounds_csv(path, rows, header=None):
    """``rows`` of ``(quantity, model_id, n, value, se, samples, inner_reps, seed)``."""
    cols = ["quantity", "model_id", "n", "value", "se", "samples", "inner_reps", "seed"]
    return write_csv(path, cols, rows, header)
