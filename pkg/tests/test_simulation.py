import csv
from pathlib import Path

import numpy as np
import pytest

from cellbddc.config import load_config
from cellbddc.mesh import GeometryConfig
from cellbddc.simulation import (TIMESERIES_COLUMNS, ConvergenceError, RunConfig, Simulation, StepSolver,
                                 run_simulation)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def calibrated():
    return load_config(CONFIGS / "calibrated.cfg")[0]


@pytest.fixture(scope="module")
def marched(calibrated, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_simulation(calibrated, out), out


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_hundred_steps_with_steady_iteration_count(marched, calibrated):
    res, _ = marched
    assert calibrated.n_steps == 100 and len(res.times) == 101
    after = res.iterations[res.times > calibrated.ionic.stim_duration + 1e-12]
    assert after.max() - after.min() <= 6
    assert np.all(np.abs(after - np.median(after)) <= 3)


def test_upstroke_at_stimulated_probe(marched):
    res, _ = marched
    assert res.probe_a[0] == pytest.approx(-85.0)
    assert res.probe_a.max() > 0.0
    # the far probe has not been reached yet
    assert res.probe_b.max() < -60.0


def test_timeseries_and_meta_written(marched, calibrated):
    res, out = marched
    rows = _read(out / "timeseries.csv")
    assert tuple(rows[0]) == TIMESERIES_COLUMNS
    assert len(rows) == 102
    assert float(rows[-1][0]) == pytest.approx(calibrated.t_end)
    assert int(rows[5][1]) == res.iterations[4]
    meta = (out / "meta.txt").read_text()
    for key in ("sigma_i = 0.001", "tau = 0.05", "mode = bddc", "n_dofs ="):
        assert key in meta


def test_resting_state_is_stationary():
    cfg = RunConfig(geometry=GeometryConfig(2, 2, 6, 2), t_end=5.0)
    cfg = cfg.with_(ionic=cfg.ionic.with_(stim_amplitude=0.0))
    sim = Simulation(cfg)
    u0 = sim.u.copy()
    for _ in range(100):
        sim.step()
        a, b = sim.probe_voltages()
        assert abs(a + 85) <= 1e-6 and abs(b + 85) <= 1e-6
    v = sim.layout.jumps(sim.u)
    assert np.abs(v[~sim.layout.is_gap] - cfg.ionic.v_rest).max() <= 1e-9
    assert np.abs(v[sim.layout.is_gap]).max() <= 1e-9
    assert np.abs(sim.u - u0).max() <= 1e-9


def test_solver_modes_agree_on_one_step(calibrated):
    sim = Simulation(calibrated.with_(geometry=GeometryConfig(2, 2, 12, 2)))
    f = sim.rhs()
    solver = StepSolver(sim.dec, calibrated.tau, tol=1e-11)
    sols = {m: solver.solve(f, m)[0] for m in ("cg_full", "cg_schur", "bddc")}
    ref = sols["bddc"]
    for m, u in sols.items():
        assert np.abs(u - ref).max() <= 1e-6 * np.abs(ref).max(), m


def test_partial_series_on_nonconvergence(calibrated, tmp_path):
    cfg = calibrated.with_(maxit=1, tol=1e-12)
    with pytest.raises(ConvergenceError) as info:
        run_simulation(cfg, tmp_path)
    assert info.value.report is not None and not info.value.report.converged
    rows = _read(tmp_path / "timeseries.csv")
    assert tuple(rows[0]) == TIMESERIES_COLUMNS
    assert len(rows) == 2  # t = 0 only


def test_unknown_mode_rejected(calibrated):
    with pytest.raises(ValueError):
        StepSolver(Simulation(calibrated).dec, 0.05).solve(np.zeros(3), "gmres")


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(t_end=0.01), dict(tol=1.5), dict(mode="lu"),
                                dict(sigma_i=0.0)])
def test_invalid_run_config(kw):
    with pytest.raises(ValueError):
        RunConfig(**kw)
