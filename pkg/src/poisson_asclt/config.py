"""Flat ``key = value`` experiment configuration with typed literals.

Example::

    model = clique(k=1, r=1.0)
    region = box(-0.5,-0.5; 0.5,0.5)
    n_max = 2000
    schedule = complete
    seeds = 1, 2, 3

Literals: ``box(lo...; hi...)``, ``ball(c...; r)``, ``polytope(a..., b; ...)``,
``whole(<region>)``, ``boundary(<region>)``, ``count``, ``constant(value=v)``,
``knn(k=, m=)``, ``clique(k=, r=)``,
``voronoi(A=<region>, method=exact2d | mc(quadrature_count=, seed=))``,
``complete`` and ``strided(base=, stride=)``. Lines starting with ``#`` are
comments. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


from .asclt import Complete, Strided
from .domain import Ball, Boundary, Box, HalfspacePolytope, WholeRegion, origin_anchored
from .errors import AscltError, ConfigError
from .functionals import (Constant, Count, CliqueCount, Exact2D, KnnEdgeLength, MonteCarlo,
                          VoronoiVolume, unit_cube)

# ---------------------------------------------------------------------------
# literal syntax tree

_TOKEN = re.compile(r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[(),;=]))")


@dataclass
class Call:
    name: str
    groups: list  # groups separated by ';', each a list of items
    kwargs: dict


def _tokens(text: str):
    pos = 0
    out = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse {text[pos:]!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokens(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ConfigError(f"expected {value or 'a value'}, found {tok[1]!r}")
        self.i += 1
        return tok

    def value(self):
        kind, text = self.take()
        if kind == "num":
            return float(text) if any(c in text for c in ".eE") else int(text)
        if kind != "name":
            raise ConfigError(f"unexpected {text!r}")
        call = Call(text, [], {})
        if self.peek()[1] != "(":
            return call
        self.take("(")
        group = []
        while self.peek()[1] != ")":
            kind2, t2 = self.peek()
            if kind2 == "name" and self.i + 1 < len(self.toks) and self.toks[self.i + 1][1] == "=":
                self.take()
                self.take("=")
                call.kwargs[t2] = self.value()
            else:
                group.append(self.value())
            sep = self.peek()[1]
            if sep == ",":
                self.take(",")
            elif sep == ";":
                self.take(";")
                call.groups.append(group)
                group = []
            elif sep != ")":
                raise ConfigError(f"unexpected {sep!r} in {call.name}(...)")
        self.take(")")
        if group or call.groups:
            call.groups.append(group)
        return call

    def done(self):
        if self.i != len(self.toks):
            raise ConfigError(f"trailing input {self.toks[self.i][1]!r}")


def parse_literal(text: str):
    p = _Parser(text)
    v = p.value()
    p.done()
    return v


def _numbers(group, name):
    if not all(isinstance(v, (int, float)) for v in group):
        raise ConfigError(f"{name} expects numbers")
    return [float(v) for v in group]


# ---------------------------------------------------------------------------
# typed conversions


def region_from(node):
    if not isinstance(node, Call):
        raise ConfigError("expected a region literal")
    try:
        if node.name == "box" and len(node.groups) == 2:
            return Box(_numbers(node.groups[0], "box"), _numbers(node.groups[1], "box"))
        if node.name == "ball" and len(node.groups) == 2 and len(node.groups[1]) == 1:
            return Ball(_numbers(node.groups[0], "ball"), _numbers(node.groups[1], "ball")[0])
        if node.name == "polytope" and node.groups:
            rows = [_numbers(g, "polytope") for g in node.groups]
            return HalfspacePolytope([r[:-1] for r in rows], [r[-1] for r in rows])
    except AscltError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"malformed region literal {node.name}(...)")


def parse_region(text: str):
    return region_from(parse_literal(text))


def target_from(node):
    if isinstance(node, Call) and node.name in ("whole", "boundary") and len(node.groups) == 1:
        inner = node.groups[0]
        if len(inner) == 1:
            region = region_from(inner[0])
            return WholeRegion(region) if node.name == "whole" else Boundary(region)
    raise ConfigError("expected whole(<region>) or boundary(<region>)")


def _kw(node: Call, allowed: dict):
    unknown = set(node.kwargs) - set(allowed)
    if unknown or node.groups:
        raise ConfigError(f"{node.name}(...) accepts only {sorted(allowed)}")
    return {k: node.kwargs.get(k, default) for k, default in allowed.items()}


def method_from(node):
    if isinstance(node, Call) and node.name == "exact2d" and not node.kwargs:
        return Exact2D()
    if isinstance(node, Call) and node.name == "mc":
        kw = _kw(node, {"quadrature_count": None, "seed": 0})
        if kw["quadrature_count"] is None:
            raise ConfigError("mc(...) needs quadrature_count")
        return MonteCarlo(int(kw["quadrature_count"]), int(kw["seed"]))
    raise ConfigError("method must be exact2d or mc(quadrature_count=..., seed=...)")


def model_from(node, Y):
    if not isinstance(node, Call):
        raise ConfigError("expected a model literal")
    try:
        if node.name == "count":
            _kw(node, {})
            return Count(Y)
        if node.name == "constant":
            return Constant(float(_kw(node, {"value": 1.0})["value"]), Y)
        if node.name == "knn":
            kw = _kw(node, {"k": 1, "m": 1.0})
            if not float(kw["k"]).is_integer():
                raise ConfigError("knn k must be an integer")
            return KnnEdgeLength(int(kw["k"]), float(kw["m"]), Y)
        if node.name == "clique":
            kw = _kw(node, {"k": 1, "r": 1.0})
            if not float(kw["k"]).is_integer():
                raise ConfigError("clique k must be an integer")
            return CliqueCount(int(kw["k"]), float(kw["r"]), Y)
        if node.name == "voronoi":
            kw = _kw(node, {"A": None, "method": None})
            if kw["A"] is None:
                raise ConfigError("voronoi(...) needs A=<region>")
            method = None if kw["method"] is None else method_from(kw["method"])
            return VoronoiVolume(region_from(kw["A"]), method, Y)
    except ConfigError:
        raise
    except AscltError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown model {node.name!r}")


def schedule_from(node):
    if isinstance(node, Call) and node.name == "complete" and not node.kwargs and not node.groups:
        return Complete()
    if isinstance(node, Call) and node.name == "strided":
        kw = _kw(node, {"base": 1, "stride": 10})
        try:
            return Strided(int(kw["base"]), int(kw["stride"]))
        except AscltError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError("schedule must be complete or strided(base=..., stride=...)")


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Every effective parameter of a run; see the module docstring for syntax."""

    region: object = field(default_factory=lambda: unit_cube(2))
    model: object = None
    n_max: int = 2000
    schedule: object = field(default_factory=Complete)
    seeds: tuple = (1,)
    reps: int = 500
    k_grid: tuple = (125, 250, 500, 1000, 2000)
    calibration: str = ""
    t_grid: tuple = (0.5, 1.0, 2.0)
    trajectories: int = 100
    il_points: int = 20
    p_dprime: float = 0.5
    c_pprime: float = 1.0
    alpha: float = 1.0
    p: float = 0.5
    q: float = 0.5
    p_prime: float = 1.0
    outer_samples: int = 20
    inner_reps: int = 30
    local_scale: float = 2.0
    quad_points: int = 100_000
    bound_n: tuple = (100,)
    target: object = None
    decay_n: tuple = (1000,)
    # depths from the target boundary in units of n**(-1/d)
    decay_units: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
    decay_reps: int = 200
    radius_n: int = 200
    radius_points: int = 40
    radius_trials: int = 20
    threads: int = 1
    # shift applied to move the configured region onto the origin (not serialized)
    region_shift: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.model is None:
            object.__setattr__(self, "model", Count(self.region))
        if self.target is None:
            object.__setattr__(self, "target", self.model.target)
        for name in ("n_max", "reps", "trajectories", "il_points", "outer_samples", "inner_reps",
                     "quad_points", "decay_reps", "radius_n", "radius_points", "radius_trials", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def bound_config(self):
        from .bounds import BoundConfig

        try:
            return BoundConfig(self.p_dprime, self.c_pprime, self.alpha, self.p, self.q,
                               self.outer_samples, self.inner_reps, self.p_prime, self.local_scale)
        except AscltError as exc:
            raise ConfigError(str(exc)) from exc

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and serialize(self) == serialize(other)

    __hash__ = None


_INT = {"n_max", "reps", "trajectories", "il_points", "outer_samples", "inner_reps", "quad_points",
        "decay_reps", "radius_n", "radius_points", "radius_trials", "threads"}
_FLOAT = {"p_dprime", "c_pprime", "alpha", "p", "q", "p_prime", "local_scale"}
_INT_LIST = {"seeds", "k_grid", "bound_n", "decay_n"}
_FLOAT_LIST = {"t_grid", "decay_units"}
KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig) if f.name != "region_shift")
# worker count never changes results, so it stays out of the hash
_UNHASHED = {"threads"}


def _scalar(text, kind, key):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{key}: {text!r} is not a number") from None
    if kind is int:
        if not v.is_integer():
            raise ConfigError(f"{key}: {text!r} is not an integer")
        return int(v)
    return v


def _fmt_float(v: float) -> str:
    return repr(float(v))


def parse_entries(entries: dict) -> ExperimentConfig:
    unknown = set(entries) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    shift = None
    if "region" in entries:
        region, shift = origin_anchored(parse_region(entries["region"]))
        kwargs["region"] = region
        if np.any(shift != 0):
            kwargs["region_shift"] = tuple(float(v) for v in shift)
    Y = kwargs.get("region", unit_cube(2))
    if "model" in entries:
        kwargs["model"] = model_from(parse_literal(entries["model"]), Y)
        if kwargs["model"].Y != Y:
            # models with a fixed window (Voronoi) must agree with the configured region
            raise ConfigError(f"model window {kwargs['model'].Y!r} differs from region {Y!r}")
    for key, text in entries.items():
        if key in ("region", "model"):
            continue
        if key in _INT:
            kwargs[key] = _scalar(text, int, key)
        elif key in _FLOAT:
            kwargs[key] = _scalar(text, float, key)
        elif key in _INT_LIST or key in _FLOAT_LIST:
            kind = int if key in _INT_LIST else float
            parts = [s for s in re.split(r"[,\s]+", text.strip()) if s]
            kwargs[key] = tuple(_scalar(s, kind, key) for s in parts)
        elif key == "schedule":
            kwargs[key] = schedule_from(parse_literal(text))
        elif key == "target":
            target = target_from(parse_literal(text))
            if "region_shift" in kwargs:
                target = type(target)(target.region.translated(shift))
            kwargs[key] = target
        elif key == "calibration":
            kwargs[key] = text.strip()
    return ExperimentConfig(**kwargs)


def _entries(text: str) -> dict:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value.strip()
    return entries


def parse_text(text: str) -> ExperimentConfig:
    return parse_entries(_entries(text))


def load(path=None, overrides=()) -> ExperimentConfig:
    """Read a config file (optional) and apply ``key=value`` overrides on top."""
    entries = _entries(Path(path).read_text()) if path else {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        entries[key.strip()] = value.strip()
    return parse_entries(entries)


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_text(serialize(c)) == c``."""
    lines = []
    for key in KEYS:
        v = getattr(cfg, key)
        if key == "model":
            text = cfg.model.descriptor()
        elif key in _FLOAT:
            text = _fmt_float(v)
        elif key in _INT:
            text = str(int(v))
        elif key in _INT_LIST:
            text = ", ".join(str(int(x)) for x in v)
        elif key in _FLOAT_LIST:
            text = ", ".join(_fmt_float(x) for x in v)
        else:
            text = str(v) if key == "calibration" else repr(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    lines = [l for l in serialize(cfg).splitlines() if l.split(" = ")[0] not in _UNHASHED]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]
