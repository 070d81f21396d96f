"""BDDC preconditioner for the interface system ``Ŝ u = f̂``.

The partially assembled space keeps every copy of a dual DOF independent and
merges all copies of a primal DOF into one coarse unknown.  Application::

    M⁻¹ r = R̃_Dᵀ ( Σ_i [0 R_iΔᵀ] [K_II K_IΔ; K_ΔI K_ΔΔ]_i⁻¹ [0; R_iΔ] + Φ S_ΠΠ⁻¹ Φᵀ ) R̃_D r

The coarse matrix of a floating problem (pure Neumann plus membrane
couplings) is singular with the constant primal vector as kernel; one primal
class is then grounded, which yields a symmetric generalized inverse.  The
constant component it leaves undetermined is removed by the Krylov deflation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import spd_factor
from .mesh import Decomposition, classify_primal_dual
from .schur import SchurSystem

__all__ = ["rho_weights", "ScalingMatrix", "build_scaling", "BddcPreconditioner",
           "build_bddc", "build_coarse", "apply_bddc"]


class SingularSubdomainError(np.linalg.LinAlgError):
    pass


def rho_weights(sigmas) -> np.ndarray:
    """ρ-scaling ``σ_i / Σ_j σ_j`` over the subdomains sharing a node."""
    s = np.asarray(sigmas, dtype=float)
    if np.any(s <= 0):
        raise ValueError("conductivities must be positive")
    return s / s.sum()


@dataclass(frozen=True, eq=False)
class ScalingMatrix:
    """ρ-scaling weight of every local interface DOF (local-interface layout)."""

    weights: np.ndarray
    offsets: np.ndarray

    def local(self, i: int) -> np.ndarray:
        return self.weights[self.offsets[i]:self.offsets[i + 1]]


def build_scaling(dec: Decomposition, schur: SchurSystem | None = None) -> ScalingMatrix:
    """Weights ``σ_s / Σ_m σ_m`` where ``m`` runs over the subdomains holding a copy of the DOF."""
    if np.any(dec.sigma <= 0):
        raise ValueError("conductivities must be positive")
    gd, subs, offs = [], [], [0]
    for dm in dec.dofmaps:
        g = dm.global_dofs[dm.n_interior:]
        gd.append(g)
        subs.append(np.full(len(g), dm.sub))
        offs.append(offs[-1] + len(g))
    gd = np.concatenate(gd)
    sig = dec.sigma[np.concatenate(subs)]
    denom = np.bincount(gd, weights=sig, minlength=dec.n_dofs)
    return ScalingMatrix(weights=sig / denom[gd], offsets=np.asarray(offs))


class BddcPreconditioner:
    """Immutable after construction; ``apply`` allocates its own work vectors."""

    def __init__(self, schur: SchurSystem, primal_dofs, local_primal_class, weights):
        self.schur = schur
        ops = schur.local_ops
        self.primal_dofs = np.asarray(primal_dofs, dtype=np.int64)
        self.n_primal = len(self.primal_dofs)
        self.weights = np.asarray(weights, dtype=float)

        dual_mask = np.zeros(schur.n_local_interface, dtype=bool)
        for lo, sl in zip(ops, schur.local_slices()):
            dual_mask[sl.start:sl.start + lo.n_d] = True
        self.dual_mask = dual_mask
        iface_cols = schur.R.indices  # one nonzero per row, rows in order
        self.dual_iface_pos = iface_cols[dual_mask]
        self.dual_weights = self.weights[dual_mask]
        self.primal_iface_pos = schur.iface_pos[self.primal_dofs]

        # stacked [I Δ] blocks
        id_sizes = np.array([lo.n_i + lo.n_d for lo in ops])
        id_offs = np.concatenate([[0], np.cumsum(id_sizes)])
        self.delta_pos = np.concatenate([id_offs[k] + lo.n_i + np.arange(lo.n_d) for k, lo in enumerate(ops)])
        self.n_id = int(id_offs[-1])
        K_id = sp.block_diag([lo.block("ID", "ID") for lo in ops], format="csc")
        self._id_lu = spd_factor(K_id)

        self.Phi_dual, self.S_PP = build_coarse(ops, local_primal_class, self.n_primal)
        self._setup_coarse()

    def _setup_coarse(self):
        S = self.S_PP
        n = self.n_primal
        self.grounded = None
        if n == 0:
            self._coarse_lu = None
            return
        scale = abs(S.diagonal()).max()
        if np.abs(S @ np.ones(n)).max() <= 1e-10 * scale * n:
            keep = np.arange(n - 1)
            self.grounded = n - 1
            self._coarse_lu = spd_factor(S[keep][:, keep]) if n > 1 else None
        else:
            self._coarse_lu = spd_factor(S)

    def coarse_solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.grounded is None:
            return self._coarse_lu.solve(b) if self._coarse_lu is not None else b[:0]
        c = np.zeros_like(b)
        if self._coarse_lu is not None:
            c[:-1] = self._coarse_lu.solve(b[:-1])
        return c

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        g_dual = self.dual_weights * r[self.dual_iface_pos]
        g_prim = r[self.primal_iface_pos]

        rhs = np.zeros(self.n_id)
        rhs[self.delta_pos] = g_dual
        z_dual = self._id_lu.solve(rhs)[self.delta_pos]

        if self.n_primal:
            c = self.coarse_solve(g_prim + self.Phi_dual.T @ g_dual)
            z_dual += self.Phi_dual @ c
        out = np.zeros(self.schur.n_interface)
        np.add.at(out, self.dual_iface_pos, self.dual_weights * z_dual)
        if self.n_primal:
            out[self.primal_iface_pos] = c
        return out

    __call__ = apply


def build_coarse(local_ops, local_primal_class, n_primal: int):
    """Coarse basis (dual rows of ``Φ``) and coarse matrix ``S_ΠΠ``.

    For each subdomain ``X_i = -[K_II K_IΔ; K_ΔI K_ΔΔ]⁻¹ [K_IΠ; K_ΔΠ]``; its
    dual rows form the local block of ``Φ`` and
    ``K_ΠΠ + [K_ΠI K_ΠΔ] X_i`` is the local coarse contribution.
    """
    phi_r, phi_c, phi_v = [], [], []
    s_r, s_c, s_v = [], [], []
    dual_off = 0
    for lo, cls in zip(local_ops, local_primal_class):
        if lo.n_p:
            rhs = lo.block("ID", "P").toarray()
            try:
                X = -lo.interior_dual_factor.solve(rhs)
            except RuntimeError as exc:  # SuperLU: exactly singular
                raise SingularSubdomainError(f"[I Δ] block of subdomain {lo.sub} is singular") from exc
            if not np.all(np.isfinite(X)):
                raise SingularSubdomainError(f"[I Δ] block of subdomain {lo.sub} is singular")
            S_loc = lo.block("P", "P").toarray() + lo.block("P", "ID") @ X
            S_loc = 0.5 * (S_loc + S_loc.T)
            Xd = X[lo.n_i:, :]
            rr, cc = np.meshgrid(dual_off + np.arange(lo.n_d), cls, indexing="ij")
            phi_r.append(rr.ravel())
            phi_c.append(cc.ravel())
            phi_v.append(Xd.ravel())
            rr, cc = np.meshgrid(cls, cls, indexing="ij")
            s_r.append(rr.ravel())
            s_c.append(cc.ravel())
            s_v.append(S_loc.ravel())
        dual_off += lo.n_d
    cat = lambda xs, dt=float: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
    Phi = sp.csr_matrix((cat(phi_v), (cat(phi_r, np.int64), cat(phi_c, np.int64))), shape=(dual_off, n_primal))
    S = sp.csr_matrix((cat(s_v), (cat(s_r, np.int64), cat(s_c, np.int64))), shape=(n_primal, n_primal))
    Phi.eliminate_zeros()
    S.sum_duplicates()
    return Phi, S


def build_bddc(dec: Decomposition, schur: SchurSystem) -> BddcPreconditioner:
    pd = classify_primal_dual(dec)
    scaling = build_scaling(dec, schur)
    return BddcPreconditioner(schur, pd.primal_dofs, pd.local_primal_class, scaling.weights)


def apply_bddc(pre: BddcPreconditioner, r):
    r = np.asarray(r)
    if r.shape != (pre.schur.n_interface,):
        raise ValueError(f"expected interface vector of length {pre.schur.n_interface}")
    return pre.apply(r)
