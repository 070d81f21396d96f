"""Time marching of the cell-by-cell model with a choice of linear solver.

Each step splits the membrane kinetics from the potential update: the gating
variable and the membrane current are advanced explicitly, then the linear
system ``𝒦 u = f`` is solved implicitly by one of three solvers:

* ``cg_full``: deflated CG on the full matrix;
* ``cg_schur``: deflated CG on the interface Schur complement;
* ``bddc``: BDDC-preconditioned CG on the interface Schur complement.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .assembly import assemble_global, assemble_rhs, jump_mass_matrix, membrane_load_matrix
from .bddc import build_bddc
from .ionic import IonicParams, MembraneState, membrane_layout, splitting_step, stimulus_mask
from .krylov import SolveReport, pcg, zero_mean_shift
from .mesh import Decomposition, GeometryConfig, build_decomposition
from .schur import build_schur

__all__ = ["MODES", "RunConfig", "ConvergenceError", "StepSolver", "Simulation", "SimulationResult",
           "run_simulation", "write_meta"]

log = logging.getLogger(__name__)

MODES = ("cg_full", "cg_schur", "bddc")


class ConvergenceError(RuntimeError):
    """A linear solve hit ``maxit`` without reaching the tolerance."""

    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sigma_i: float = 1.0
    sigma_e: float = 2.0
    ionic: IonicParams = field(default_factory=IonicParams)
    t_end: float = 5.0
    tau: float = 0.05
    mode: str = "bddc"
    tol: float = 1e-6
    maxit: int = 10000
    out_dir: str | None = None
    experiment: str = "solve"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.t_end < self.tau:
            raise ValueError("t_end must be at least one time step")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"unknown solver mode {self.mode!r}; expected one of {MODES}")
        if self.sigma_i <= 0 or self.sigma_e <= 0:
            raise ValueError("conductivities must be positive")
        if self.maxit < 1:
            raise ValueError("maxit must be positive")

    @property
    def c_m(self) -> float:
        return self.ionic.c_m

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.tau))

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def flat(self) -> dict:
        """All resolved parameters as one flat mapping (for provenance)."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("geometry", "ionic"):
                out.update({g.name: getattr(v, g.name) for g in fields(v)})
            else:
                out[f.name] = v
        return out


class StepSolver:
    """Solves ``𝒦 u = f`` for a fixed decomposition and time step.

    The Schur system and the BDDC preconditioner are built lazily, so a
    ``cg_full`` run never pays for them.
    """

    def __init__(self, dec: Decomposition, tau: float, c_m: float = 1.0, *, tol: float = 1e-6,
                 maxit: int = 10000):
        self.dec, self.tau, self.c_m, self.tol, self.maxit = dec, tau, c_m, tol, maxit
        self._K = None
        self._schur = None
        self._bddc = None

    @property
    def K(self):
        if self._K is None:
            self._K = assemble_global(self.dec, self.tau, self.c_m).K
        return self._K

    @property
    def schur(self):
        if self._schur is None:
            self._schur = build_schur(self.dec, self.tau, self.c_m)
        return self._schur

    @property
    def bddc(self):
        if self._bddc is None:
            self._bddc = build_bddc(self.dec, self.schur)
        return self._bddc

    def solve(self, f, mode: str = "bddc", x0=None):
        """Return ``(u, report)`` with ``u`` shifted to zero extracellular mean."""
        if mode not in MODES:
            raise ValueError(f"unknown solver mode {mode!r}")
        if mode == "cg_full":
            u, rep = pcg(self.K, f, tol=self.tol, maxit=self.maxit, x0=x0,
                         deflation=np.ones(self.dec.n_dofs))
        else:
            sys = self.schur
            g0 = None if x0 is None else np.asarray(x0)[sys.interface_dofs]
            pre = self.bddc if mode == "bddc" else None
            ug, rep = pcg(sys.matvec, sys.reduce_rhs(f), pre, tol=self.tol, maxit=self.maxit, x0=g0,
                          deflation=np.ones(sys.n_interface), schur=True)
            u = sys.recover(ug, f)
        return zero_mean_shift(u, self.dec), rep


@dataclass
class SimulationResult:
    times: np.ndarray
    iterations: np.ndarray
    cond: np.ndarray
    residuals: np.ndarray
    probe_a: np.ndarray
    probe_b: np.ndarray
    u: np.ndarray
    state: MembraneState
    final_report: SolveReport | None
    wall_time: float


def _probe_nodes(dec: Decomposition, layout) -> tuple[int, int]:
    """Membrane nodes nearest the lower-left and upper-right corners of the cell lattice.

    Both sit on cell-extracellular faces; the first belongs to the stimulated corner cell.
    """
    ionic = np.flatnonzero(~layout.is_gap)
    xy = layout.coords[ionic]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    a = ionic[np.argmin(np.hypot(*(xy - lo).T))]
    b = ionic[np.argmin(np.hypot(*(xy - hi).T))]
    return int(a), int(b)


class Simulation:
    """Stateful time marcher; ``step`` advances one time step."""

    def __init__(self, cfg: RunConfig, dec: Decomposition | None = None):
        self.cfg = cfg
        self.dec = dec if dec is not None else build_decomposition(cfg.geometry, sigma_i=cfg.sigma_i,
                                                                   sigma_e=cfg.sigma_e)
        self.layout = membrane_layout(self.dec)
        self.solver = StepSolver(self.dec, cfg.tau, cfg.c_m, tol=cfg.tol, maxit=cfg.maxit)
        self.jump_mass = jump_mass_matrix(self.dec, cfg.c_m)
        self.load = membrane_load_matrix(self.dec, self.layout)
        self.stim = stimulus_mask(self.layout, cfg.ionic)
        self.probes = _probe_nodes(self.dec, self.layout)
        self.u = self.initial_potential()
        n = self.layout.n_nodes
        self.state = MembraneState(v=self.layout.jumps(self.u), w=np.zeros(n))
        self.t = 0.0
        self.k = 0

    def initial_potential(self) -> np.ndarray:
        """Cells at the resting potential, extracellular space at zero."""
        u = np.full(self.dec.n_dofs, self.cfg.ionic.v_rest)
        u[self.dec.dof_offsets[0]:self.dec.dof_offsets[1]] = 0.0
        return u

    def rhs(self):
        """Advance the membrane state and return the right-hand side of the next solve."""
        self.state, current = splitting_step(self.state, self.u, self.t, self.cfg.tau, self.cfg.ionic,
                                             self.layout, self.stim)
        return assemble_rhs(self.dec, self.u, current, self.cfg.tau, self.cfg.c_m,
                            jump_mass=self.jump_mass, load=self.load)

    def step(self, mode: str | None = None, x0="previous"):
        f = self.rhs()
        x = self.u if isinstance(x0, str) and x0 == "previous" else x0
        u, rep = self.solver.solve(f, mode or self.cfg.mode, x0=x)
        self.k += 1
        self.t = self.k * self.cfg.tau
        if not rep.converged:
            raise ConvergenceError(f"{mode or self.cfg.mode} did not converge at t = {self.t:g} ms "
                                   f"({rep.iterations} iterations)", rep)
        self.u = u
        return f, rep

    def probe_voltages(self) -> tuple[float, float]:
        v = self.layout.jumps(self.u)
        return float(v[self.probes[0]]), float(v[self.probes[1]])


TIMESERIES_COLUMNS = ("time", "iters", "k2", "probe_A_mV", "probe_B_mV", "residual")


def write_meta(path: Path, params: dict) -> None:
    with open(path, "w") as fh:
        for k, v in params.items():
            fh.write(f"{k} = {v}\n")


def run_simulation(cfg: RunConfig, out_dir: str | Path | None = None, *, record_every: int = 1,
                   progress=None) -> SimulationResult:
    """March from ``t = 0`` to ``cfg.t_end`` and record one row per step.

    With an output directory, ``timeseries.csv`` and ``meta.txt`` are written
    there; rows are flushed as they are produced, so a non-convergence leaves
    the partial series on disk before :class:`ConvergenceError` propagates.
    """
    t0 = time.perf_counter()
    sim = Simulation(cfg)
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    writer = fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = cfg.flat()
        meta.update(n_dofs=sim.dec.n_dofs, n_interface=len(sim.dec.interface_dofs),
                    n_subdomains=sim.dec.n_subdomains, H_over_h=cfg.geometry.H_over_h)
        write_meta(out / "meta.txt", meta)
        fh = open(out / "timeseries.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)

    rows = []
    va, vb = sim.probe_voltages()
    rows.append((0.0, 0, np.nan, va, vb, 0.0))
    if writer is not None:
        writer.writerow([f"{x:.6g}" if isinstance(x, float) else x for x in rows[0]])
    rep = None
    try:
        for k in range(cfg.n_steps):
            _, rep = sim.step()
            va, vb = sim.probe_voltages()
            row = (sim.t, rep.iterations, rep.cond, va, vb, rep.final_residual)
            rows.append(row)
            if writer is not None and (k % record_every == 0 or k == cfg.n_steps - 1):
                writer.writerow([f"{x:.6g}" if isinstance(x, float) else x for x in row])
                fh.flush()
            if progress is not None:
                progress(k + 1, cfg.n_steps, rep)
    finally:
        if fh is not None:
            fh.close()

    arr = np.array(rows, dtype=float)
    return SimulationResult(times=arr[:, 0], iterations=arr[:, 1].astype(int), cond=arr[:, 2],
                            residuals=arr[:, 5], probe_a=arr[:, 3], probe_b=arr[:, 4], u=sim.u,
                            state=sim.state, final_report=rep, wall_time=time.perf_counter() - t0)
