"""Benchmark sweeps: weak scalability, quasi-optimality and time-step robustness.

Every sweep point marches the model with the configured solver and, at the
final step, solves the same right-hand side with all three solvers from a
zero initial guess.  The row records the condition estimate and iteration
count of each of those three solves.
"""

from __future__ import annotations

import csv
import logging
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .krylov import SolveReport
from .simulation import MODES, RunConfig, Simulation, write_meta

__all__ = ["WEAK_CELLS", "OPT_LCY", "TAUS", "BenchRow", "final_step_reports", "run_sweep",
           "run_weak_scalability", "run_optimality", "run_tau_sweep", "write_table", "read_table", "report_summary",
           "TABLE_COLUMNS"]

log = logging.getLogger(__name__)

WEAK_CELLS = (2, 4, 8, 12, 16, 20, 24, 28, 32)
OPT_LCY = tuple(range(2, 11))
TAUS = (0.005, 0.01, 0.02, 0.05, 0.1)

TABLE_COLUMNS = ("label", "k2_bddc", "it_bddc", "k2_schur", "it_schur", "k2_cg", "it_cg")
_EXTRA_COLUMNS = ("x", "n_dofs", "n_interface", "steps", "ritz_min_bddc", "max_rel_diff", "wall_s", "error")
_COL_MODE = {"bddc": "bddc", "schur": "cg_schur", "cg": "cg_full"}


@dataclass
class BenchRow:
    label: str
    x: float
    reports: dict = field(default_factory=dict)
    n_dofs: int = 0
    n_interface: int = 0
    steps: int = 0
    max_rel_diff: float = float("nan")
    wall: float = 0.0
    error: str = ""

    def k2(self, mode: str) -> float:
        rep = self.reports.get(mode)
        return rep.cond if rep is not None else float("nan")

    def it(self, mode: str) -> int:
        rep = self.reports.get(mode)
        return rep.iterations if rep is not None else -1

    @property
    def ok(self) -> bool:
        return not self.error

    def as_dict(self) -> dict:
        d = {"label": self.label}
        for col, mode in _COL_MODE.items():
            d[f"k2_{col}"] = self.k2(mode)
            d[f"it_{col}"] = self.it(mode)
        rep = self.reports.get("bddc")
        d.update(x=self.x, n_dofs=self.n_dofs, n_interface=self.n_interface, steps=self.steps,
                 ritz_min_bddc=rep.ritz_min if rep is not None else float("nan"),
                 max_rel_diff=self.max_rel_diff, wall_s=self.wall, error=self.error)
        return d


def final_step_reports(cfg: RunConfig, steps: int | None = None, modes=MODES):
    """March ``steps - 1`` steps, then solve the last step with every mode.

    Returns ``(reports, solutions, sim)``; the solutions are zero-mean shifted.
    """
    n = cfg.n_steps if steps is None else int(steps)
    if n < 1:
        raise ValueError("need at least one step")
    sim = Simulation(cfg)
    for _ in range(n - 1):
        sim.step()
    f = sim.rhs()
    reports, sols = {}, {}
    for m in modes:
        u, rep = sim.solver.solve(f, m, x0=None)
        reports[m], sols[m] = rep, u
    return reports, sols, sim


def _max_rel_diff(sols: dict) -> float:
    vals = list(sols.values())
    if len(vals) < 2:
        return 0.0
    scale = max(np.linalg.norm(v) for v in vals) or 1.0
    return max(np.linalg.norm(a - b) / scale for i, a in enumerate(vals) for b in vals[i + 1:])


def run_sweep(points, *, steps: int | None = None, modes=MODES, out_dir=None, progress=None):
    """Run ``points`` (iterable of ``(label, x, RunConfig)``) and collect one row each.

    Failures are recorded on the row and the sweep continues.
    """
    rows = []
    for label, x, cfg in points:
        t0 = time.perf_counter()
        row = BenchRow(label=label, x=x, steps=cfg.n_steps if steps is None else int(steps))
        try:
            reports, sols, sim = final_step_reports(cfg, steps, modes)
            row.reports = reports
            row.n_dofs = sim.dec.n_dofs
            row.n_interface = len(sim.dec.interface_dofs)
            row.max_rel_diff = _max_rel_diff(sols)
            bad = [m for m, r in reports.items() if not r.converged]
            if bad:
                row.error = "no convergence: " + ",".join(bad)
        except Exception as exc:  # keep the sweep going
            log.warning("sweep point %s failed: %s", label, exc)
            log.debug(traceback.format_exc())
            row.error = f"{type(exc).__name__}: {exc}"
        row.wall = time.perf_counter() - t0
        rows.append(row)
        if progress is not None:
            progress(row)
    if out_dir is not None:
        write_table(rows, Path(out_dir) / "table.csv")
    return rows


def _with_geometry(cfg: RunConfig, **kw) -> RunConfig:
    return cfg.with_(geometry=replace(cfg.geometry, **kw))


def run_weak_scalability(base: RunConfig, *, cells=WEAK_CELLS, steps: int | None = None, out_dir=None,
                         modes=MODES, progress=None):
    """Grow the lattice from 2×2 to 32×32 cells at fixed elements per cell."""
    pts = [(f"{c}x{c}", c, _with_geometry(base, cells_x=c, cells_y=c)) for c in cells]
    return _run_and_meta(base, pts, steps, out_dir, modes, progress, "weak")


def run_optimality(base: RunConfig, *, lcy=OPT_LCY, steps: int | None = None, out_dir=None, modes=MODES,
                   progress=None):
    """Refine every cell of a fixed lattice: ``(6 Lcy) × Lcy`` elements, so ``H/h = 6 Lcy``."""
    pts = [(f"Lcy={l}", 6 * l, _with_geometry(base, elems_x=6 * l, elems_y=l)) for l in lcy]
    return _run_and_meta(base, pts, steps, out_dir, modes, progress, "opt")


def run_tau_sweep(base: RunConfig, *, taus=TAUS, steps: int | None = None, out_dir=None, modes=MODES,
                  progress=None):
    """Vary the time step on a fixed mesh over a fixed time interval ``[0, t_end]``."""
    pts = []
    for tau in taus:
        t_end = base.t_end if steps is None else steps * tau
        pts.append((f"tau={tau:g}", tau, base.with_(tau=tau, t_end=max(t_end, tau))))
    return _run_and_meta(base, pts, steps, out_dir, modes, progress, "tau")


def _run_and_meta(base, pts, steps, out_dir, modes, progress, name):
    rows = run_sweep(pts, steps=steps, modes=modes, out_dir=out_dir, progress=progress)
    if out_dir is not None:
        meta = base.flat()
        meta.update(experiment=name, steps_per_row=steps if steps is not None else "t_end/tau",
                    points=" ".join(p[0] for p in pts))
        write_meta(Path(out_dir) / "meta.txt", meta)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else f"{v:.6g}"
    return v


def write_table(rows, path) -> Path:
    """One row per sweep point; the leading columns follow the benchmark tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS + _EXTRA_COLUMNS)
        for r in rows:
            d = r.as_dict()
            w.writerow([_fmt(d[c]) for c in TABLE_COLUMNS + _EXTRA_COLUMNS])
    return path


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            row = {}
            for k, v in rec.items():
                if k in ("label", "error"):
                    row[k] = v
                else:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        row[k] = float("nan")
            out.append(row)
    return out


def report_summary(rows) -> str:
    lines = [f"{'label':>10} {'k2_bddc':>9} {'it':>4} {'k2_schur':>10} {'it':>5} {'k2_cg':>10} {'it':>5}"]
    for r in rows:
        lines.append(f"{r.label:>10} {r.k2('bddc'):9.2f} {r.it('bddc'):4d} {r.k2('cg_schur'):10.3g} "
                     f"{r.it('cg_schur'):5d} {r.k2('cg_full'):10.3g} {r.it('cg_full'):5d}"
                     + (f"  [{r.error}]" if r.error else ""))
    return "\n".join(lines)
