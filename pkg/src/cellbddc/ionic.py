"""Membrane kinetics: Aliev-Panfilov on cell-extracellular faces, linear gap junctions.

Voltages handed to this module are physical (mV); the Aliev-Panfilov model is
evaluated in its dimensionless variable ``v* = (v - v_rest) / v_amp`` and its
current is scaled back to µA/cm² by ``C_m * v_amp / time_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mesh import Decomposition

__all__ = [
    "IonicParams",
    "MembraneLayout",
    "MembraneState",
    "membrane_layout",
    "ionic_rhs",
    "gap_junction_current",
    "stimulus_mask",
    "splitting_step",
]

POLE_GUARD = 1e-10


@dataclass(frozen=True)
class IonicParams:
    k: float = 8.0
    a: float = 0.15
    eps0: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3
    v_rest: float = -85.0
    v_amp: float = 100.0
    time_scale: float = 12.9   # ms per dimensionless time unit
    c_m: float = 1.0           # µF/cm²
    g_gap: float = 1.0         # mS/cm²
    stim_amplitude: float = 50.0   # µA/cm²
    stim_duration: float = 1.0     # ms
    stim_cells: tuple = (1,)

    def __post_init__(self):
        if self.v_amp <= 0:
            raise ValueError("v_amp must be positive")
        for name in ("k", "a", "eps0", "mu1", "mu2", "time_scale", "c_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kw) -> "IonicParams":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class MembraneLayout:
    """Unique membrane node pairs of a decomposition.

    Node ``n`` couples global DOFs ``dof_a[n]`` (cell side) and ``dof_b[n]``;
    its transmembrane voltage is ``u[dof_a] - u[dof_b]``.  ``face_nodes[k]``
    indexes the membrane nodes of ``dec.faces[k]`` in face order.
    """

    dof_a: np.ndarray
    dof_b: np.ndarray
    sub_a: np.ndarray
    is_gap: np.ndarray
    coords: np.ndarray
    face_nodes: list

    @property
    def n_nodes(self) -> int:
        return len(self.dof_a)

    def jumps(self, u) -> np.ndarray:
        return u[self.dof_a] - u[self.dof_b]


@dataclass
class MembraneState:
    """Transmembrane voltage (mV) per membrane node and recovery variable ``w``.

    ``w`` is kept for every node for alignment; on gap-junction nodes it stays 0.
    """

    v: np.ndarray
    w: np.ndarray

    def copy(self) -> "MembraneState":
        return MembraneState(self.v.copy(), self.w.copy())


def membrane_layout(dec: Decomposition) -> MembraneLayout:
    pairs = np.concatenate([np.column_stack([f.dofs_a, f.dofs_b]) for f in dec.faces])
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    face_nodes, start = [], 0
    for f in dec.faces:
        face_nodes.append(inverse[start:start + len(f.nodes)])
        start += len(f.nodes)
    sub_a = dec.dof_sub[uniq[:, 0]]
    is_gap = dec.dof_sub[uniq[:, 1]] != 0
    coords = dec.node_coords(dec.dof_node[uniq[:, 0]])
    return MembraneLayout(dof_a=uniq[:, 0], dof_b=uniq[:, 1], sub_a=sub_a, is_gap=is_gap,
                          coords=coords, face_nodes=face_nodes)


def ionic_rhs(v, w, params: IonicParams):
    """Dimensionless Aliev-Panfilov terms ``(i_ion, dw/dt)``.

    ``i_ion = k v (v - a)(v - 1) + v w`` is the outward current and
    ``dw/dt = (eps0 + mu1 w / (v + mu2)) (-w - k v (v - a - 1))``.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    p = params
    i_ion = p.k * v * (v - p.a) * (v - 1.0) + v * w
    den = v + p.mu2
    den = np.where(np.abs(den) < POLE_GUARD, np.where(den < 0, -POLE_GUARD, POLE_GUARD), den)
    dw = (p.eps0 + p.mu1 * w / den) * (-w - p.k * v * (v - p.a - 1.0))
    return i_ion, dw


def gap_junction_current(v_jump, params: IonicParams):
    """Linear gap-junction current ``G_gap * v`` (µA/cm² for v in mV)."""
    return params.g_gap * np.asarray(v_jump, dtype=float)


def stimulus_mask(layout: MembraneLayout, params: IonicParams) -> np.ndarray:
    """Cell-extracellular membrane nodes of the stimulated cells."""
    return ~layout.is_gap & np.isin(layout.sub_a, params.stim_cells)


def splitting_step(state: MembraneState, u_prev, t: float, tau: float, params: IonicParams,
                   layout: MembraneLayout, stim=None):
    """Advance the gating variable and return the membrane current ``F`` per node.

    ``w`` takes one explicit Euler step of length ``tau`` using the voltage of
    ``u_prev``; the ionic current is then evaluated at ``(v_prev, w_new)``.
    The stimulus (inward, so it is subtracted from ``F``) acts on ``stim``
    nodes while ``t < stim_duration``.
    """
    v_mv = layout.jumps(u_prev)
    ionic = ~layout.is_gap
    vd = (v_mv - params.v_rest) / params.v_amp
    _, dw = ionic_rhs(vd, state.w, params)
    w_new = np.where(ionic, state.w + (tau / params.time_scale) * dw, 0.0)
    i_ion, _ = ionic_rhs(vd, w_new, params)
    current = np.where(ionic, params.c_m * params.v_amp / params.time_scale * i_ion,
                       gap_junction_current(v_mv, params))
    if stim is None:
        stim = stimulus_mask(layout, params)
    if t < params.stim_duration:
        current = current - params.stim_amplitude * stim
    return MembraneState(v=v_mv, w=w_new), current
