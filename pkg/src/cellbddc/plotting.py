"""PNG figures written next to the CSV outputs (headless matplotlib)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_timeseries", "plot_table", "plot_bound"]

_MODE_STYLE = {
    "bddc": dict(color="tab:blue", marker="o", label="BDDC"),
    "schur": dict(color="tab:orange", marker="s", label="Schur"),
    "cg": dict(color="tab:green", marker="^", label="CG"),
}


def plot_timeseries(result, path) -> Path:
    """Probe voltages, iterations and condition estimate against time."""
    path = Path(path)
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    t = result.times
    axes[0].plot(t, result.probe_a, label="probe A")
    axes[0].plot(t, result.probe_b, "--", label="probe B")
    axes[0].set_ylabel("v (mV)")
    axes[0].legend(loc="best", fontsize=8)
    axes[1].plot(t[1:], result.iterations[1:])
    axes[1].set_ylabel("iterations")
    axes[2].plot(t[1:], result.cond[1:])
    axes[2].set_ylabel("k2 estimate")
    axes[2].set_xlabel("time (ms)")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_table(rows, path, xlabel: str = "sweep point") -> Path:
    """Condition estimates (log scale) and iteration counts of a benchmark sweep.

    ``rows`` are dicts with the table columns (as returned by ``read_table``)
    or objects with an ``as_dict`` method.
    """
    path = Path(path)
    recs = [r.as_dict() if hasattr(r, "as_dict") else r for r in rows]
    x = np.array([float(r["x"]) for r in recs])
    fig, (ax_k, ax_it) = plt.subplots(1, 2, figsize=(10, 4))
    for key, style in _MODE_STYLE.items():
        k2 = np.array([float(r[f"k2_{key}"]) for r in recs])
        it = np.array([float(r[f"it_{key}"]) for r in recs])
        ax_k.plot(x, k2, **style)
        ax_it.plot(x, np.where(it < 0, np.nan, it), **style)
    ax_k.set_yscale("log")
    ax_k.set_ylabel("k2")
    ax_it.set_ylabel("iterations")
    for ax in (ax_k, ax_it):
        ax.set_xlabel(xlabel)
        ax.grid(alpha=0.3, which="both")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_bound(reports, C: float, path) -> Path:
    """Measured maximum ratios against the bound ``C Ψ (1 + log H/h)²``."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for tau in sorted({r.tau for r in reports}):
        sel = sorted((r for r in reports if r.tau == tau), key=lambda r: r.H_over_h)
        hh = [r.H_over_h for r in sel]
        line, = ax.plot(hh, [r.max_ratio for r in sel], "o-", label=f"max ratio, tau={tau:g}")
        ax.plot(hh, [r.bound(C) for r in sel], "--", color=line.get_color(), label=f"bound, tau={tau:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("H/h")
    ax.set_ylabel("|P_D u|^2 / |u|^2")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
