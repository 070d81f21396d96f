import csv

import numpy as np
import pytest

from cellbddc import bench
from cellbddc.cli import main
from cellbddc.config import ConfigError, parse_config
from cellbddc.simulation import RunConfig

SMALL = """
cells_x = 2
cells_y = 2
elems_x = 12
elems_y = 2
sigma_i = 0.001
sigma_e = 0.002
time_scale = 6.0
tau = 0.05
t_end = 0.2
"""


def test_parse_sets_every_section():
    cfg, opts = parse_config(SMALL + "stim_cells = 1 2\nmode = cg_schur\nout = here\ncells = 2 4\nseed = 3\n")
    assert cfg.geometry.elems_x == 12 and cfg.geometry.frame_layers_y is None
    assert cfg.ionic.time_scale == 6.0 and cfg.ionic.stim_cells == (1, 2)
    assert cfg.sigma_i == 0.001 and cfg.mode == "cg_schur" and cfg.out_dir == "here"
    assert cfg.n_steps == 4
    assert opts == {"cells": [2, 4], "seed": 3}


def test_defaults_untouched_by_empty_config():
    cfg, opts = parse_config("# nothing\n\n")
    assert cfg == RunConfig() and opts == {}


def test_optional_and_boolean_values():
    cfg, opts = parse_config("frame_layers_y = 2\nfigures = off\ntaus = 0.01, 0.05\n")
    assert cfg.geometry.frame_layers_y == 2
    assert opts == {"figures": False, "taus": [0.01, 0.05]}


@pytest.mark.parametrize("text", ["bogus = 1", "tau 0.05", "tau = fast", "elems_x = 1", "mode = lu",
                                  "figures = maybe"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_bench_rows_and_table_roundtrip(tmp_path):
    base, _ = parse_config(SMALL)
    rows = bench.run_weak_scalability(base, cells=(2, 3), steps=2, out_dir=tmp_path)
    assert [r.label for r in rows] == ["2x2", "3x3"]
    for r in rows:
        assert r.ok
        assert r.reports["bddc"].ritz_min >= 1 - 1e-6
        assert r.it("bddc") < min(r.it("cg_schur"), r.it("cg_full"))
    table = bench.read_table(tmp_path / "table.csv")
    assert list(table[0])[:len(bench.TABLE_COLUMNS)] == list(bench.TABLE_COLUMNS)
    assert table[1]["it_bddc"] == rows[1].it("bddc")
    assert "k2_bddc" in bench.report_summary(rows)


def test_cli_solve_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["solve", str(cfg), "--out", str(out), "--mode", "cg_schur", "--tol", "1e-8"]) == 0
    with open(out / "timeseries.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["time", "iters", "k2", "probe_A_mV", "probe_B_mV"]
    assert len(rows) == 6
    assert (out / "timeseries.png").stat().st_size > 0
    meta = (out / "meta.txt").read_text()
    assert "mode = cg_schur" in meta and "tol = 1e-08" in meta
    assert "4 steps" in capsys.readouterr().out


def test_cli_no_figures(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert main(["solve", str(cfg), "--out", str(out), "--no-figures"]) == 0
    assert (out / "timeseries.csv").exists() and not (out / "timeseries.png").exists()


def test_cli_bench_opt(tmp_path):
    cfg = tmp_path / "opt.cfg"
    cfg.write_text(SMALL + "lcy = 2 3\n")
    out = tmp_path / "bench"
    assert main(["bench", "opt", str(cfg), "--steps", "1", "--out", str(out)]) == 0
    table = bench.read_table(out / "table.csv")
    assert [r["x"] for r in table] == [12, 18]
    assert (out / "table.png").exists() and (out / "meta.txt").exists()


def test_cli_verify_bound(tmp_path):
    cfg = tmp_path / "bound.cfg"
    cfg.write_text(SMALL + "bound_lcy = 2 3\nbound_taus = 0.05\nsamples = 20\nseed = 1\n")
    out = tmp_path / "bound"
    assert main(["verify-bound", str(cfg), "--out", str(out), "--no-figures"]) == 0
    with open(out / "bound.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all(r["satisfied"] == "1" for r in rows)
    assert np.isclose(float(rows[0]["implied_C"]), float(rows[0]["bound"]) / float(rows[0]["psi"])
                      / float(rows[0]["log_factor"]), rtol=1e-5)


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert main(["solve", str(bad)]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["solve", str(tmp_path / "missing.cfg")]) == 2
