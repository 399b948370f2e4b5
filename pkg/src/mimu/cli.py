"""Command-line interface: ``mimu run | montecarlo | observability | report``.

Exit codes: 0 success, 1 configuration or usage error, 2 more diverged runs than allowed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ConfigFile, parse_config
from .evaluation import (
    CAL_COMPONENTS, SUMMARY_COLUMNS, convergence_series, summarize_run,
)
from .observability import DEFAULT_TOL, analyze
from .sim import SimConfig, run_monte_carlo, run_single

log = logging.getLogger("mimu")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def fmt(value):
    """Deterministic text for CSV cells: floats with 9 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return f"{v:.9g}"
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _axes(prefix, names="xyz"):
    return [f"{prefix}_{a}" for a in names]


STATE_COLUMNS = (
    ["t"] + _axes("p_true") + _axes("p_est") + _axes("q_true", "wxyz") + _axes("q_est", "wxyz")
    + _axes("v_true") + _axes("v_est") + _axes("err_p") + _axes("err_theta") + _axes("sigma_p") + _axes("sigma_theta")
)
CAL_COLUMNS = ["t", "imu"] + [f"err_{c}" for c in CAL_COMPONENTS] + [f"sigma_{c}" for c in CAL_COMPONENTS]
RESIDUAL_COLUMNS = ["t", "imu", "r_ax", "r_ay", "r_az", "r_wx", "r_wy", "r_wz"]
CONVERGENCE_COLUMNS = ["t", "imu", "component", "mean_error", "mean_sigma3"]


def write_run(rec, directory):
    """``states.csv``, ``calibration.csv`` and ``residuals.csv`` of one run."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sig = np.sqrt(np.clip(np.diagonal(rec.pose_cov, axis1=1, axis2=2), 0.0, None))
    states = np.column_stack(
        (rec.t, rec.p_true, rec.p_est, rec.q_true, rec.q_est, rec.v_true, rec.v_est, rec.pose_err, sig)
    )
    _write_csv(d / "states.csv", STATE_COLUMNS, states.tolist())
    cal_rows, res_rows = [], []
    for k, t in enumerate(rec.t):
        for i in range(rec.n_imus):
            cal_rows.append([float(t), i, *rec.cal_err[k, i].tolist(), *rec.cal_sigma[k, i].tolist()])
            res_rows.append([float(t), i, *rec.residuals[k, i].tolist()])
    _write_csv(d / "calibration.csv", CAL_COLUMNS, cal_rows)
    _write_csv(d / "residuals.csv", RESIDUAL_COLUMNS, res_rows)


def write_summary(records, path):
    summaries = [summarize_run(r) for r in records]
    _write_csv(path, SUMMARY_COLUMNS, [s.row() for s in summaries])
    return summaries


def write_convergence(records, path):
    t, mean_err, sigma3 = convergence_series(records)
    rows = []
    for k, tk in enumerate(t):
        for i in range(mean_err.shape[1]):
            for c, name in enumerate(CAL_COMPONENTS):
                rows.append([float(tk), i, name, mean_err[k, i, c], sigma3[k, i, c]])
    _write_csv(path, CONVERGENCE_COLUMNS, rows)


def _apply_overrides(cfg: ConfigFile, args):
    sim = cfg.sim
    if getattr(args, "seed", None) is not None:
        sim = replace(sim, seed=args.seed)
    if getattr(args, "runs", None) is not None:
        if args.runs < 1:
            raise ConfigError("runs", "must be at least 1")
        cfg.runs = args.runs
    if getattr(args, "output", None):
        cfg.output_dir = args.output
    cfg.sim = sim
    return cfg


def _load(args):
    if args.config is None:
        return ConfigFile(SimConfig())
    return parse_config(args.config)


def cmd_run(args):
    cfg = _apply_overrides(_load(args), args)
    out = Path(cfg.output_dir)
    rec = run_single(cfg.sim)
    write_run(rec, out / "run_0000")
    write_summary([rec], out / "summary.csv")
    s = summarize_run(rec)
    print(f"run seed={cfg.sim.seed} mode={cfg.sim.mode} imus={rec.n_imus} rmse={fmt(s.rmse_pos_m)} m "
          f"diverged={fmt(rec.diverged)}")
    if rec.diverged:
        log.error("run diverged: %s", rec.failure)
        return EXIT_DIVERGED if args.max_diverged < 1 else EXIT_OK
    return EXIT_OK


def cmd_montecarlo(args):
    cfg = _apply_overrides(_load(args), args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        log.info("run %d/%d done", done, total)

    res = run_monte_carlo(cfg.sim, cfg.runs, progress=progress)
    if not args.no_run_files:
        for rec in res.records:
            write_run(rec, out / f"run_{rec.run_id:04d}")
    write_summary(res.records, out / "summary.csv")
    n_ok = len(res.records) - res.n_diverged
    if n_ok:
        write_convergence(res.records, out / "convergence.csv")
    print(f"montecarlo runs={cfg.runs} seed={cfg.sim.seed} diverged={res.n_diverged} output={out}")
    if res.n_diverged > args.max_diverged:
        log.error("%d runs diverged (budget %d)", res.n_diverged, args.max_diverged)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_observability(args):
    if args.imus < 1:
        raise ConfigError("imus", "must be at least 1")
    rep = analyze(args.imus, with_camera=not args.no_camera, seed=args.seed, tol=args.tol, frozen=args.frozen)
    sensing = "IMU only" if args.no_camera else "IMU + camera"
    print(f"observability  imus={args.imus}  sensing={sensing}  "
          f"linearisation={'single point' if args.frozen else 'trajectory'}")
    for line in rep.lines():
        print("  " + line)
    if args.csv:
        _write_csv(args.csv, ["index", "singular_value"], [[k, s] for k, s in enumerate(rep.singular_values)])
    return EXIT_OK


def _read_summary(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError("summary", f"{path} has no rows")
    missing = [c for c in SUMMARY_COLUMNS if c not in rows[0]]
    if missing:
        raise ConfigError("summary", f"{path} lacks columns {', '.join(missing)}")
    return rows


# (label, summary column, unit, decimals); fixed decimals keep the table readable and
# print vanishing errors as zero
REPORT_METRICS = [
    ("position RMSE", "rmse_pos_m", "m", 4),
    ("RPE 1 s", "rpe_1s_m", "m", 4),
    ("RPE 5 s", "rpe_5s_m", "m", 4),
    ("NEES (pose)", "nees_mean", "-", 2),
    ("extrinsic position", "cal_pos_err_mm", "mm", 3),
    ("extrinsic orientation", "cal_ori_err_mrad", "mrad", 3),
    ("accel bias", "cal_ba_err_mm_s2", "mm/s^2", 3),
    ("gyro bias", "cal_bw_err_mrad_s", "mrad/s", 3),
    ("3-sigma coverage", "sigma3_coverage", "-", 3),
]


def _fixed(v, decimals):
    out = f"{v:.{decimals}f}"
    # avoid a lone "-0.000"
    return out[1:] if out.startswith("-") and float(out) == 0.0 else out


def render_report(rows):
    """Mean and std of every metric across runs, one table per (mode, IMU count)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["mode"], int(r["n_imus"])), []).append(r)
    lines = []
    for (mode, n), grp in sorted(groups.items()):
        div = sum(int(r["diverged"]) for r in grp)
        lines.append(f"mode {mode}, {n} IMU(s): {len(grp)} runs, {div} diverged")
        lines.append(f"  {'quantity':<24}{'unit':>8}{'mean':>12}{'std':>12}")
        for label, col, unit, dec in REPORT_METRICS:
            vals = np.array([float(r[col]) for r in grp if int(r["diverged"]) == 0])
            vals = vals[np.isfinite(vals)]
            if vals.size:
                mean, std = _fixed(vals.mean(), dec), _fixed(vals.std(), dec)
            else:
                mean = std = "n/a"
            lines.append(f"  {label:<24}{unit:>8}{mean:>12}{std:>12}")
        lines.append("")
    return "\n".join(lines)


def cmd_report(args):
    print(render_report(_read_summary(args.summary)), end="")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="mimu", description="Multi-IMU filter simulation and evaluation.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, runs=False):
        sp.add_argument("config", nargs="?", help="YAML configuration (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--output", "-o", help="override output_dir")
        sp.add_argument("--max-diverged", type=int, default=0, help="allowed diverged runs before exit code 2")
        if runs:
            sp.add_argument("--runs", type=int, help="override the number of runs")

    sp = sub.add_parser("run", help="simulate one run and write its CSV files")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("montecarlo", help="run a campaign and write summary and convergence CSVs")
    common(sp, runs=True)
    sp.add_argument("--no-run-files", action="store_true", help="skip the per-run directories")
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("observability", help="rank of the observability matrix")
    sp.add_argument("--imus", type=int, default=2)
    sp.add_argument("--no-camera", action="store_true", help="IMU-only sensing")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=DEFAULT_TOL, help="relative singular-value threshold")
    sp.add_argument("--frozen", action="store_true", help="linearise at a single point instead of along a trajectory")
    sp.add_argument("--csv", help="write the singular values to this file")
    sp.set_defaults(func=cmd_observability)

    sp = sub.add_parser("report", help="aligned-text tables from a summary CSV")
    sp.add_argument("summary", help="summary.csv written by run or montecarlo")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
