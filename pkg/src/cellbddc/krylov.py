"""Deflated (preconditioned) conjugate gradients with Lanczos condition estimates."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = ["IndefiniteOperatorError", "SolveReport", "pcg", "lanczos_ritz_values", "zero_mean_shift"]


class IndefiniteOperatorError(ArithmeticError):
    """Raised when CG meets a direction with non-positive curvature."""


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)
    ritz_min: float = float("nan")
    ritz_max: float = float("nan")
    wall_time: float = 0.0
    preconditioned: bool = False
    schur: bool = False

    @property
    def cond(self) -> float:
        """Condition estimate ``λ_max / λ_min`` of the (preconditioned) operator."""
        if not np.isfinite(self.ritz_min) or self.ritz_min <= 0:
            return 1.0 if self.iterations <= 1 else float("nan")
        return max(1.0, self.ritz_max / self.ritz_min)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def lanczos_ritz_values(alphas, betas) -> np.ndarray:
    """Eigenvalues of the Lanczos tridiagonal built from CG coefficients.

    ``alphas[k]`` are the step lengths and ``betas[k]`` the direction update
    factors (``betas`` one shorter than ``alphas``).
    """
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: len(a) - 1]
    if len(a) == 0:
        return np.zeros(0)
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    return sla.eigh_tridiagonal(diag, off, eigvals_only=True)


def _project(v, z, zz):
    if z is None:
        return v
    return v - (z @ v) / zz * z


def pcg(op, b, pre=None, *, tol: float = 1e-6, maxit: int = 10000, x0=None, deflation=None,
        schur: bool = False):
    """Solve ``op x = b`` by CG, optionally preconditioned and deflated.

    ``op`` and ``pre`` are callables (or objects with ``@``).  With a
    ``deflation`` vector ``z`` the right-hand side and every residual are
    projected onto ``z^⊥`` (Euclidean), so singular consistent systems with
    kernel ``span{z}`` are handled; the returned ``x`` is also made orthogonal
    to ``z``.  Stops when ``||r_k|| / ||r_0|| <= tol`` where ``r`` is the
    preconditioned residual if ``pre`` is given.

    Returns ``(x, SolveReport)``.
    """
    t0 = time.perf_counter()
    A = op if callable(op) else (lambda v: op @ v)
    M = None if pre is None else (pre if callable(pre) else (lambda v: pre @ v))
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    z_def = None if deflation is None else np.asarray(deflation, dtype=float)
    zz = None if z_def is None else float(z_def @ z_def)

    b = _project(b, z_def, zz)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = _project(b - A(x), z_def, zz)
    s = r if M is None else _project(M(r), z_def, zz)
    report = SolveReport(iterations=0, converged=False, preconditioned=M is not None, schur=schur)

    res0 = np.linalg.norm(s)
    bnorm = np.linalg.norm(b)
    report.residuals.append(1.0)
    if res0 == 0.0 or res0 <= 1e-300 or (bnorm > 0 and np.linalg.norm(r) <= 1e-15 * bnorm):
        report.converged = True
        report.residuals[-1] = 0.0
        report.wall_time = time.perf_counter() - t0
        return _project(x, z_def, zz), report

    p = s.copy()
    rs = r @ s
    alphas, betas = [], []
    for k in range(1, maxit + 1):
        q = A(p)
        curv = p @ q
        if curv <= 0:
            raise IndefiniteOperatorError(f"non-positive curvature {curv:.3e} at iteration {k}")
        alpha = rs / curv
        x += alpha * p
        r = _project(r - alpha * q, z_def, zz)
        s = r if M is None else _project(M(r), z_def, zz)
        alphas.append(alpha)
        rel = np.linalg.norm(s) / res0
        report.residuals.append(rel)
        report.iterations = k
        if rel <= tol:
            report.converged = True
            break
        rs_new = r @ s
        beta = rs_new / rs
        betas.append(beta)
        rs = rs_new
        p = s + beta * p

    ritz = lanczos_ritz_values(alphas, betas)
    if len(ritz):
        report.ritz_min, report.ritz_max = float(ritz[0]), float(ritz[-1])
    report.wall_time = time.perf_counter() - t0
    return _project(x, z_def, zz), report


def zero_mean_shift(u, dec):
    """Subtract the mass-weighted mean of the extracellular potential from every DOF."""
    u = np.asarray(u, dtype=float)
    w = dec.dof_mass_weight
    ext = slice(dec.dof_offsets[0], dec.dof_offsets[1])
    c = (w[ext] @ u[ext]) / w[ext].sum()
    return u - c
