"""Averaging and jump operators on the partially continuous space, and the projection bound.

Vectors of ``W̃(Γ′)`` live in the local-interface layout of
:class:`~cellbddc.schur.SchurSystem`: one entry per local interface DOF of
every subdomain (own interface nodes and copies of neighbour face nodes).
Entries that refer to the same primal DOF are kept equal.

``E_D`` averages all local copies of a DOF with the scaling weights and
``P_D = I - E_D`` returns the scaled differences between copies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .bddc import ScalingMatrix, build_scaling
from .mesh import Decomposition, build_decomposition, classify_primal_dual
from .schur import SchurSystem, build_schur

__all__ = ["BoundReport", "psi", "log_factor", "apply_ED", "apply_PD", "project_primal",
           "random_wtilde", "s_prime_seminorm", "verify_projection_bound", "exact_projection_norm",
           "run_bound_sweep"]


def _weights(scaling) -> np.ndarray:
    return scaling.weights if isinstance(scaling, ScalingMatrix) else np.asarray(scaling, dtype=float)


def apply_ED(sys: SchurSystem, scaling, u) -> np.ndarray:
    """Weighted average of the local copies: ``R (Rᵀ (w ⊙ u))``.  Works column-wise on 2D input."""
    w = _weights(scaling)
    u = np.asarray(u, dtype=float)
    wu = w * u if u.ndim == 1 else w[:, None] * u
    return sys.R @ (sys.R.T @ wu)


def apply_PD(sys: SchurSystem, scaling, u) -> np.ndarray:
    """Scaled jumps between copies, ``u - E_D u``."""
    u = np.asarray(u, dtype=float)
    return u - apply_ED(sys, scaling, u)


def _primal_rows(sys: SchurSystem, primal_dofs) -> np.ndarray:
    is_primal = np.zeros(sys.n_interface, dtype=bool)
    is_primal[sys.iface_pos[np.asarray(primal_dofs)]] = True
    return is_primal[sys.R.indices]


def project_primal(sys: SchurSystem, primal_dofs, u) -> np.ndarray:
    """Replace every primal copy by the plain mean over its copies (maps into ``W̃``)."""
    u = np.array(u, dtype=float)
    rows = _primal_rows(sys, primal_dofs)
    cnt = np.asarray(sys.R.sum(axis=0)).ravel()
    mean = (sys.R.T @ u) / np.maximum(cnt, 1) if u.ndim == 1 else (sys.R.T @ u) / np.maximum(cnt, 1)[:, None]
    avg = sys.R @ mean
    u[rows] = avg[rows]
    return u


def random_wtilde(sys: SchurSystem, primal_dofs, n: int, rng=None) -> np.ndarray:
    """``n`` samples (columns) with i.i.d. uniform entries, then primal copies averaged."""
    rng = np.random.default_rng(rng)
    u = rng.uniform(-1.0, 1.0, size=(sys.n_local_interface, n))
    return project_primal(sys, primal_dofs, u)


def s_prime_seminorm(sys: SchurSystem, u) -> np.ndarray | float:
    """``Σ_i u_iᵀ S′_i u_i`` (per column for 2D input), matrix-free."""
    u = np.asarray(u, dtype=float)
    su = sys.local_schur_apply(u)
    val = np.einsum("i...,i...->...", u, su)
    return float(val) if u.ndim == 1 else val


def psi(tau: float, h: float, sigma_min: float, sigma_max: float, c_m: float = 1.0) -> float:
    """``τ σ_M (1/(τ σ_m) + 2/(C_m h))``."""
    return tau * sigma_max * (1.0 / (tau * sigma_min) + 2.0 / (c_m * h))


def log_factor(H_over_h: float) -> float:
    return (1.0 + np.log(H_over_h)) ** 2


@dataclass(frozen=True)
class BoundReport:
    samples: int
    discarded: int
    max_ratio: float
    mean_ratio: float
    psi: float
    log_factor: float
    H_over_h: float
    h: float
    tau: float
    sigma_min: float
    sigma_max: float

    @property
    def implied_C(self) -> float:
        return self.max_ratio / (self.psi * self.log_factor)

    def bound(self, C: float) -> float:
        return C * self.psi * self.log_factor

    def satisfied(self, C: float) -> bool:
        return self.max_ratio <= self.bound(C)


def verify_projection_bound(dec: Decomposition, tau: float, samples: int = 200, *, c_m: float = 1.0,
                            rng=None, sys: SchurSystem | None = None, batch: int = 50) -> BoundReport:
    """Sample ``|P_D u|²_{S′} / |u|²_{S′}`` over random ``u ∈ W̃(Γ′)``.

    Samples with vanishing energy are discarded.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if sys is None:
        sys = build_schur(dec, tau, c_m)
    scaling = build_scaling(dec, sys)
    primal = classify_primal_dual(dec).primal_dofs
    rng = np.random.default_rng(rng)
    ratios, discarded, done = [], 0, 0
    while done < samples:
        m = min(batch, samples - done)
        u = random_wtilde(sys, primal, m, rng)
        den = s_prime_seminorm(sys, u)
        num = s_prime_seminorm(sys, apply_PD(sys, scaling, u))
        scale = np.abs(u).max(axis=0) ** 2 * max(abs(sys.K_GG.diagonal()).max(), 1e-300)
        ok = den > 1e-14 * scale
        discarded += int((~ok).sum())
        ratios.extend(np.maximum(num[ok], 0.0) / den[ok])
        done += m
    ratios = np.asarray(ratios)
    if not np.all(np.isfinite(ratios)):
        raise FloatingPointError("non-finite energy ratio")
    smin, smax = float(dec.sigma.min()), float(dec.sigma.max())
    hh = dec.cfg.H_over_h
    return BoundReport(samples=len(ratios), discarded=discarded,
                       max_ratio=float(ratios.max()) if len(ratios) else 0.0,
                       mean_ratio=float(ratios.mean()) if len(ratios) else 0.0,
                       psi=psi(tau, dec.cfg.h, smin, smax, c_m), log_factor=log_factor(hh),
                       H_over_h=hh, h=dec.cfg.h, tau=tau, sigma_min=smin, sigma_max=smax)


def exact_projection_norm(dec: Decomposition, tau: float, c_m: float = 1.0,
                          sys: SchurSystem | None = None) -> float:
    """``sup |P_D u|²_{S′} / |u|²_{S′}`` over ``W̃(Γ′)`` by a dense eigenproblem (small meshes).

    ``W̃`` is parametrised by one value per dual copy and one per primal DOF;
    the constant vector, which both forms annihilate, is removed first.
    """
    if sys is None:
        sys = build_schur(dec, tau, c_m)
    scaling = build_scaling(dec, sys)
    primal = classify_primal_dual(dec).primal_dofs
    rows = _primal_rows(sys, primal)
    n = sys.n_local_interface
    # basis of W̃: unit vectors on dual rows, indicator of all copies for each primal DOF
    cols = [np.eye(n)[:, ~rows]]
    pcols = sys.R[:, sys.iface_pos[primal]].toarray()
    B = np.hstack(cols + [pcols])
    S = _dense_local_schur(sys)
    P = B - apply_ED(sys, scaling, B)
    A_num = P.T @ S @ P
    A_den = B.T @ S @ B
    # restrict to the complement of the constant vector
    one = np.linalg.lstsq(B, np.ones(n), rcond=None)[0]
    Q = sla.null_space(one[None, :])
    A_num = Q.T @ A_num @ Q
    A_den = Q.T @ A_den @ Q
    ev = sla.eigh(0.5 * (A_num + A_num.T), 0.5 * (A_den + A_den.T), eigvals_only=True)
    return float(ev[-1])


def _dense_local_schur(sys: SchurSystem) -> np.ndarray:
    blocks = [lo.schur_complement() for lo in sys.local_ops]
    return sla.block_diag(*blocks)


def run_bound_sweep(geometry, *, sigma_i: float, sigma_e: float, c_m: float = 1.0, lcy=(2, 4, 8),
                    taus=(0.01, 0.05), samples: int = 200, rng=None):
    """Bound check over ``(6 Lcy) × Lcy`` elements per cell and several time steps.

    The constant ``C`` is fitted on the first configuration (smallest ``Lcy``,
    first ``τ``) and reused for all others.  Returns ``(reports, C)``.
    """
    rng = np.random.default_rng(rng)
    reports = []
    for l in lcy:
        dec = build_decomposition(replace(geometry, elems_x=6 * l, elems_y=l), sigma_i=sigma_i, sigma_e=sigma_e)
        for tau in taus:
            reports.append(verify_projection_bound(dec, tau, samples, c_m=c_m, rng=rng))
    C = reports[0].implied_C if reports else float("nan")
    return reports, C
