"""Command line entry point: ``poisson-asclt <subcommand> [options]``.

Every CSV written here starts with ``# config_hash=...`` and ``# seed=...``
lines. Timestamps go to ``metadata_<command>.json`` only, so reruns with the same
configuration and seed reproduce the CSV files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import asclt, bounds, malliavin
from .config import ExperimentConfig, config_hash, load, serialize
from .domain import sample_poisson
from .errors import AscltError, ConfigError, DependencyError
from .records import read_csv, write_csv
from .rng import RngStream

OUT_ENV = "POISSON_ASCLT_OUT"


class Run:
    """Shared state of one subcommand invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, seed: int, out: Path):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.out = out
        self.hash = config_hash(cfg)
        self.outputs: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()
        out.mkdir(parents=True, exist_ok=True)

    def header(self, **extra):
        return {"config_hash": self.hash, "seed": self.seed, "command": self.command, **extra}

    def csv(self, name, columns, rows, **extra):
        write_csv(self.out / name, columns, rows, self.header(**extra))
        self.outputs.append(name)

    def rng(self) -> RngStream:
        return RngStream(self.seed)

    def finish(self):
        (self.out / "resolved_config.txt").write_text(
            f"# config_hash={self.hash}\n# seed={self.seed}\n" + serialize(self.cfg))
        meta = {
            "command": self.command,
            "config_hash": self.hash,
            "seed": self.seed,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
            "threads": self.cfg.threads,
            "region_shift": list(self.cfg.region_shift),
        }
        (self.out / f"metadata_{self.command}.json").write_text(json.dumps(meta, indent=2) + "\n")


def calibration_for(cfg: ExperimentConfig, n_max: int) -> asclt.CalibrationTable:
    model = cfg.model
    if cfg.calibration:
        table = asclt.CalibrationTable.load(cfg.calibration)
        if table.model_id != model.model_id:
            raise DependencyError(f"calibration is for {table.model_id}, not {model.model_id}")
        return table
    if model.exact_moments(1) is not None:
        return asclt.exact_table(model, n_max)
    raise DependencyError(f"{model.model_id} needs a calibration file (set calibration = <path>)")


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(run: Run):
    cfg = run.cfg
    table = asclt.calibrate(cfg.model, cfg.k_grid, cfg.reps, run.rng(), cfg.threads)
    table.meta.update(run.header())
    table.save(run.out / "calibration.json")
    run.outputs.append("calibration.json")
    print(f"tau_hat = {table.tau_hat:.4f}  (theory {cfg.model.tau:g})")


def _trajectory(run: Run, seed: int):
    cfg = run.cfg
    tr = asclt.run_trajectory(cfg.model, cfg.n_max, cfg.schedule, seed)
    try:
        tr = asclt.standardize(tr, calibration_for(cfg, cfg.n_max))
    except DependencyError:
        if run.command != "trajectory":
            raise
    return tr


def cmd_trajectory(run: Run):
    for seed in run.cfg.seeds:
        tr = _trajectory(run, seed)
        run.csv(f"trajectory_{seed}.csv", ["k", "H", "F"],
                zip(tr.schedule.tolist(), tr.H, tr.F if tr.F is not None else np.full(len(tr.H), np.nan)),
                master_seed=seed)


def _report_ns(schedule: np.ndarray, points: int = 30) -> list[int]:
    valid = schedule[schedule >= 2]
    if len(valid) == 0:
        raise ConfigError("the schedule has no index n >= 2")
    wanted = np.geomspace(valid[0], valid[-1], points)
    idx = np.unique(np.clip(np.searchsorted(valid, wanted), 0, len(valid) - 1))
    return sorted({int(valid[i]) for i in idx} | {int(valid[-1])})


def cmd_asclt(run: Run):
    cfg = run.cfg
    rows, ecdf_rows, summary = [], [], []

    def one(seed):
        return _trajectory(run, seed)

    for seed, tr in zip(cfg.seeds, asclt.ordered_map(one, cfg.seeds, cfg.threads)):
        ns = _report_ns(tr.schedule)
        for n, W, ks, mass in asclt.asclt_rows(tr, ns):
            rows.append((seed, n, W, ks, mass))
        final = asclt.log_average_measure(tr, ns[-1])
        xs, G = asclt.weighted_ecdf(final)
        ecdf_rows += [(seed, x, g, ndtr(x)) for x, g in zip(xs, G)]
        run.csv(f"trajectory_{seed}.csv", ["k", "H", "F"], zip(tr.schedule.tolist(), tr.H, tr.F),
                master_seed=seed)
        ln = math.log(ns[-1])
        bracket = (ln < final.total_weight <= ln + 1) if tr.is_complete else None
        summary.append((seed, ns[-1], asclt.ks_to_normal(final), final.unnormalized_mass, bracket))
    run.csv("asclt.csv", ["seed", "n", "W_n", "ks", "unnormalized_mass"], rows)
    run.csv("ecdf.csv", ["seed", "x", "ecdf", "phi"], ecdf_rows)
    for seed, n, ks, mass, bracket in summary:
        tag = "n/a" if bracket is None else ("ok" if bracket else "VIOLATED")
        print(f"seed {seed}: n={n} ks={ks:.4f} W_n/ln n={mass:.4f} harmonic bracket {tag}")


def cmd_il(run: Run):
    cfg = run.cfg
    table = calibration_for(cfg, cfg.n_max)
    rows = asclt.il_diagnostic(cfg.model, cfg.n_max, cfg.t_grid, cfg.trajectories, run.rng(), table,
                               asclt.il_subgrid(cfg.n_max, cfg.il_points), cfg.threads)
    asclt.write_il_csv(run.out / "il.csv", rows, run.header())
    run.outputs.append("il.csv")


def cmd_diagnose(run: Run):
    cfg = run.cfg
    model = cfg.model
    rng = run.rng()
    decay_rows, fit_rows = [], []
    d = model.Y.dim
    for n in cfg.decay_n:
        dist = np.asarray(cfg.decay_units, dtype=float) * n ** (-1.0 / d)
        try:
            points = [malliavin.point_at_depth(cfg.target, v) for v in dist]
        except AscltError as exc:
            print(f"decay profile skipped for n={n}: {exc}")
            continue
        est = [malliavin.nonzero_score_prob(model, n, x, (), cfg.decay_reps, rng.spawn("decay", n, j))
               for j, x in enumerate(points)]
        decay_rows += [(v, n, e.p_hat, e.se, e.reps) for v, e in zip(dist, est)]
        p = np.array([e.p_hat for e in est])
        keep = p > 0
        try:
            fit = malliavin.fit_decay(dist[keep], p[keep], n, d)
            flat = malliavin.flat_fit_residual(p[keep])
            fit_rows.append((n, fit.C_hat, fit.c_hat, fit.alpha_hat, fit.residual, flat, "ok"))
        except AscltError as exc:
            fit_rows.append((n, math.nan, math.nan, math.nan, math.nan, math.nan, str(exc)))
    if decay_rows:
        run.csv("decay.csv", ["dist", "n", "p_hat", "se", "reps"], decay_rows)
        run.csv("decay_fit.csv", ["n", "C_hat", "c_hat", "alpha_hat", "residual", "flat_residual", "status"],
                fit_rows)
    radius_rows = []
    diam = model.Y.bounding_box().diameter()
    grid = np.linspace(diam / cfg.radius_points, diam, cfg.radius_points)
    unstable = 0
    for trial in range(cfg.radius_trials):
        stream = rng.spawn("radius", trial)
        config = sample_poisson(cfg.radius_n, model.Y, stream.spawn("eta"), scale_index=cfg.radius_n)
        if len(config) < 2:
            continue
        i = int(stream.spawn("pick").generator().integers(len(config)))
        extra = malliavin.random_extra_points(model.Y, stream.spawn("extra"))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r0 = malliavin.stabilization_radius_proxy(model, config, i, grid)
            r1 = malliavin.stabilization_radius_proxy(model, config, i, grid, extra)
        unstable += len(caught)
        radius_rows += [(config.points[i], r0, 0), (config.points[i], r1, len(extra))]
    malliavin.write_radius_csv(run.out / "radius.csv", radius_rows, run.header(unstable=unstable))
    run.outputs.append("radius.csv")


def cmd_bounds(run: Run):
    cfg = run.cfg
    model = cfg.model
    bc = cfg.bound_config()
    rng = run.rng()
    table = None
    if model.exact_moments(1) is None:
        table = calibration_for(cfg, max(cfg.bound_n) * 2)
    rows = []
    mid = model.Y.anchor()
    for n in cfg.bound_n:
        def add(name, est, inner):
            rows.append((name, model.model_id, n, est.value, est.standard_error, est.samples_used, inner,
                         run.seed))
        add("I_Kn", bounds.compute_IKn(model.Y, cfg.target, n, bc, cfg.quad_points, rng.spawn("IKn")), 0)
        add("psi", bounds.estimate_psi(model, n, mid, bc.beta_small, bc, rng.spawn("psi", n)), bc.inner_reps)
        add("Gamma2", bounds.estimate_gamma2(model, n, bc, rng.spawn("g2", n), table), bc.inner_reps)
        add("Gamma1", bounds.estimate_gamma1(model, n, bc, rng.spawn("g1", n), table), bc.inner_reps)
        add("Theta", bounds.estimate_theta(model, n, 2 * n, bc, rng.spawn("theta", n), table), bc.inner_reps)
    bounds.write_bounds_csv(run.out / "bounds.csv", rows, run.header())
    run.outputs.append("bounds.csv")


def cmd_report(run: Run):
    files = sorted(p for p in run.out.glob("*.csv") if p.name not in REPORT_OUTPUTS)
    if not files:
        raise DependencyError(f"no CSV files to aggregate in {run.out}")
    hashes = {}
    for p in files:
        header, _ = read_csv(p)
        hashes[p.name] = header.get("config_hash")
    distinct = set(hashes.values())
    if len(distinct) != 1 or None in distinct:
        detail = ", ".join(f"{k}: {v}" for k, v in hashes.items())
        raise ConfigError(f"refusing to aggregate files with different config hashes ({detail})")
    (run_hash,) = distinct
    lines = [f"# Run report", "", f"config hash `{run_hash}`", ""]
    tables = {p.name: read_csv(p)[1] for p in files}
    if "asclt.csv" in tables:
        rows = tables["asclt.csv"]
        run.csv("ks_vs_n.csv", ["seed", "n", "ks"], [(r["seed"], int(r["n"]), float(r["ks"])) for r in rows])
        lines += ["## Log-average KS distance", "", "| seed | n | KS | W_n / ln n |", "|---|---|---|---|"]
        last = {}
        for r in rows:
            last[r["seed"]] = r
        lines += [f"| {s} | {r['n']} | {float(r['ks']):.4f} | {float(r['unnormalized_mass']):.4f} |"
                  for s, r in last.items()]
        lines.append("")
    if "ecdf.csv" in tables:
        rows = tables["ecdf.csv"]
        run.csv("ecdf_vs_phi.csv", ["seed", "x", "ecdf", "phi"],
                [(r["seed"], float(r["x"]), float(r["ecdf"]), float(r["phi"])) for r in rows])
    if "decay.csv" in tables:
        rows = tables["decay.csv"]
        fits = {r["n"]: r for r in tables.get("decay_fit.csv", [])}
        series = []
        for r in rows:
            f = fits.get(r["n"])
            fitted = math.nan
            if f and f["status"] == "ok":
                u = float(r["n"]) ** (1 / run.cfg.model.Y.dim) * float(r["dist"])
                fitted = float(f["C_hat"]) * math.exp(-float(f["c_hat"]) * u ** float(f["alpha_hat"]))
            series.append((float(r["dist"]), int(r["n"]), float(r["p_hat"]), fitted))
        run.csv("decay_curve.csv", ["dist", "n", "p_hat", "fitted"], series)
        lines += ["## Decay fits", "", "| n | C | c | alpha | residual | flat residual |", "|---|---|---|---|---|---|"]
        for f in fits.values():
            lines.append(f"| {f['n']} | {f['C_hat']} | {f['c_hat']} | {f['alpha_hat']} | {f['residual']} | "
                         f"{f['flat_residual']} |")
        lines.append("")
    if "bounds.csv" in tables:
        lines += ["## Bound quantities", "", "| quantity | n | value | se |", "|---|---|---|---|"]
        lines += [f"| {r['quantity']} | {r['n']} | {float(r['value']):.6g} | {float(r['se']):.3g} |"
                  for r in tables["bounds.csv"]]
        lines.append("")
    if "il.csv" in tables:
        lines += ["## Log-averaged characteristic function", "", "| n | t | mean abs sq | se |", "|---|---|---|---|"]
        lines += [f"| {r['n']} | {r['t']} | {float(r['mean_sq']):.4g} | {float(r['se']):.3g} |"
                  for r in tables["il.csv"]]
        lines.append("")
    (run.out / "report.md").write_text("\n".join(lines))
    run.outputs.append("report.md")


REPORT_OUTPUTS = {"ks_vs_n.csv", "ecdf_vs_phi.csv", "decay_curve.csv"}

COMMANDS = {
    "calibrate": cmd_calibrate,
    "trajectory": cmd_trajectory,
    "asclt": cmd_asclt,
    "il": cmd_il,
    "diagnose": cmd_diagnose,
    "bounds": cmd_bounds,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poisson-asclt", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="seed (replaces the configured seed list)")
    parser.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    parser.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"seeds={args.seed}")
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        cfg = load(args.config, overrides)
        out = Path(args.out or os.environ.get(OUT_ENV) or "out")
        run = Run(args.command, cfg, cfg.seeds[0], out)
        COMMANDS[args.command](run)
        run.finish()
    except AscltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
