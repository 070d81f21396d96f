"""Command line entry point: ``cellbddc solve|bench|verify-bound``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import bench
from .config import ConfigError, load_config
from .diagnostics import run_bound_sweep
from .simulation import MODES, ConvergenceError, RunConfig, run_simulation, write_meta

log = logging.getLogger("cellbddc")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mode", choices=MODES, help="linear solver used for time marching")
    common.add_argument("--tol", type=float, help="relative tolerance on the preconditioned residual")
    common.add_argument("--out", help="output directory (default: ./out/<command>)")
    common.add_argument("--no-figures", action="store_true", help="write CSV and metadata only")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cellbddc", description="Cell-by-cell EMI simulations with a BDDC solver.")
    sub = p.add_subparsers(dest="command", required=True)
    cfg_help = "key = value configuration file"
    sub.add_parser("solve", parents=[common], help="time-march one configuration").add_argument("config", help=cfg_help)
    b = sub.add_parser("bench", parents=[common], help="run a benchmark sweep")
    b.add_argument("sweep", choices=("weak", "opt", "tau"))
    b.add_argument("config", help=cfg_help)
    b.add_argument("--steps", type=int, help="time steps per sweep point (default: t_end / tau)")
    sub.add_parser("verify-bound", parents=[common], help="sample the projection bound").add_argument("config", help=cfg_help)
    return p


def _resolve(args) -> tuple[RunConfig, dict, Path]:
    cfg, opts = load_config(args.config)
    if args.mode:
        cfg = cfg.with_(mode=args.mode)
    if args.tol is not None:
        cfg = cfg.with_(tol=args.tol)
    out = Path(args.out or cfg.out_dir or Path("out") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, opts, out


def _figures(args, opts) -> bool:
    return not args.no_figures and opts.get("figures", True)


def cmd_solve(args) -> int:
    cfg, opts, out = _resolve(args)

    def progress(k, n, rep):
        if k % max(1, n // 20) == 0 or k == n:
            log.info("step %d/%d  iters=%d  k2=%.3g", k, n, rep.iterations, rep.cond)

    try:
        res = run_simulation(cfg, out, record_every=opts.get("record_every", 1), progress=progress)
    except ConvergenceError as exc:
        log.error("%s (partial series in %s)", exc, out / "timeseries.csv")
        return 2
    if _figures(args, opts):
        from .plotting import plot_timeseries
        plot_timeseries(res, out / "timeseries.png")
    print(f"{cfg.n_steps} steps in {res.wall_time:.1f} s; iterations {res.iterations[1:].min()}-"
          f"{res.iterations[1:].max()}; output in {out}")
    return 0


def cmd_bench(args) -> int:
    cfg, opts, out = _resolve(args)
    steps = args.steps if args.steps is not None else opts.get("steps")

    def progress(row):
        log.info("%s", bench.report_summary([row]).splitlines()[1])

    if args.sweep == "weak":
        rows = bench.run_weak_scalability(cfg, cells=opts.get("cells", bench.WEAK_CELLS), steps=steps,
                                          out_dir=out, progress=progress)
        xlabel = "cells per direction"
    elif args.sweep == "opt":
        rows = bench.run_optimality(cfg, lcy=opts.get("lcy", bench.OPT_LCY), steps=steps, out_dir=out,
                                    progress=progress)
        xlabel = "H/h"
    else:
        rows = bench.run_tau_sweep(cfg, taus=opts.get("taus", bench.TAUS), steps=steps, out_dir=out,
                                   progress=progress)
        xlabel = "tau (ms)"
    if _figures(args, opts):
        from .plotting import plot_table
        plot_table(rows, out / "table.png", xlabel=xlabel)
    print(bench.report_summary(rows))
    print(f"table written to {out / 'table.csv'}")
    return 0 if all(r.ok for r in rows) else 1


def cmd_verify_bound(args) -> int:
    cfg, opts, out = _resolve(args)
    reports, C = run_bound_sweep(cfg.geometry, sigma_i=cfg.sigma_i, sigma_e=cfg.sigma_e, c_m=cfg.c_m,
                                 lcy=opts.get("bound_lcy", (2, 4, 8)), taus=opts.get("bound_taus", (0.01, 0.05)),
                                 samples=opts.get("samples", 200), rng=opts.get("seed", 0))
    with open(out / "bound.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["H_over_h", "tau", "samples", "max_ratio", "mean_ratio", "psi", "log_factor",
                    "implied_C", "bound", "satisfied"])
        for r in reports:
            w.writerow([r.H_over_h, r.tau, r.samples, f"{r.max_ratio:.6g}", f"{r.mean_ratio:.6g}",
                        f"{r.psi:.6g}", f"{r.log_factor:.6g}", f"{r.implied_C:.6g}", f"{r.bound(C):.6g}",
                        int(r.satisfied(C))])
    meta = cfg.flat()
    meta.update(experiment="verify-bound", fitted_C=C)
    write_meta(out / "meta.txt", meta)
    if _figures(args, opts):
        from .plotting import plot_bound
        plot_bound(reports, C, out / "bound.png")
    ok = all(r.satisfied(C) for r in reports)
    print(f"C = {C:.4g} fitted on H/h = {reports[0].H_over_h}, tau = {reports[0].tau:g}; "
          f"bound {'holds' if ok else 'VIOLATED'} on all {len(reports)} configurations")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return {"solve": cmd_solve, "bench": cmd_bench, "verify-bound": cmd_verify_bound}[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
