"""Static condensation onto the broken interface Γ′.

All subdomain blocks are stacked into block-diagonal sparse matrices, so one
sparse factorization of ``blockdiag(K'_{i,II})`` performs every interior solve
at once; the block structure keeps the fill inside each subdomain.

Vector layouts used here:

* global: one entry per DOF of the decomposition (``dec.n_dofs``);
* interface: one entry per global Γ′ DOF (``SchurSystem.interface_dofs``);
* local interface: concatenation over subdomains of the local Γ′_i entries
  (own interface nodes and copies), ordered dual then primal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LocalOperator, assemble_local, spd_factor
from .mesh import Decomposition

__all__ = ["SchurSystem", "build_schur", "schur_matvec", "reduce_rhs", "recover_interior"]


@dataclass(eq=False)
class SchurSystem:
    local_ops: list
    n_dofs: int
    interface_dofs: np.ndarray
    R: sp.csr_matrix = field(init=False, repr=False)
    K_II: sp.csr_matrix = field(init=False, repr=False)
    K_IG: sp.csr_matrix = field(init=False, repr=False)
    K_GG: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.interface_dofs = np.asarray(self.interface_dofs)
        pos = np.full(self.n_dofs, -1, dtype=np.int64)
        pos[self.interface_dofs] = np.arange(len(self.interface_dofs))
        self.iface_pos = pos
        self.interior_dofs = np.concatenate([lo.dofmap.global_dofs[:lo.n_i] for lo in self.local_ops])
        g = np.concatenate([lo.dofmap.global_dofs[lo.n_i:] for lo in self.local_ops])
        cols = pos[g]
        if np.any(cols < 0):
            raise ValueError("local interface DOF is not on the global interface")
        self.local_iface_gdofs = g
        self.R = sp.csr_matrix((np.ones(len(g)), (np.arange(len(g)), cols)),
                               shape=(len(g), len(self.interface_dofs)))
        self.K_II = sp.block_diag([lo.block("I", "I") for lo in self.local_ops], format="csc")
        self.K_IG = sp.block_diag([lo.block("I", "G") for lo in self.local_ops], format="csr")
        self.K_GG = sp.block_diag([lo.block("G", "G") for lo in self.local_ops], format="csr")
        self.K_GI = self.K_IG.T.tocsr()
        self._lu = spd_factor(self.K_II) if self.K_II.shape[0] else None
        offs = np.cumsum([0] + [lo.n_d + lo.n_p for lo in self.local_ops])
        self.local_iface_offsets = offs

    @property
    def n_interface(self) -> int:
        return len(self.interface_dofs)

    @property
    def n_local_interface(self) -> int:
        return self.R.shape[0]

    def solve_interior(self, b):
        if self._lu is None:
            return np.zeros(0)
        return self._lu.solve(np.asarray(b, dtype=float))

    def local_schur_apply(self, u_loc):
        """Unassembled ``S' u`` on the local-interface layout."""
        u_loc = np.asarray(u_loc, dtype=float)
        out = self.K_GG @ u_loc
        if self._lu is not None:
            out -= self.K_GI @ self.solve_interior(self.K_IG @ u_loc)
        return out

    def matvec(self, x):
        """``Ŝ x = Rᵀ S' R x`` computed without forming any Schur complement."""
        return self.R.T @ self.local_schur_apply(self.R @ np.asarray(x, dtype=float))

    def as_linear_operator(self) -> spla.LinearOperator:
        n = self.n_interface
        return spla.LinearOperator((n, n), matvec=self.matvec, dtype=float)

    def reduce_rhs(self, f):
        f = np.asarray(f, dtype=float)
        fhat = f[self.interface_dofs].copy()
        if self._lu is not None:
            fhat -= self.R.T @ (self.K_GI @ self.solve_interior(f[self.interior_dofs]))
        return fhat

    def recover(self, u_gamma, f):
        """Full global vector from interface values and the right-hand side."""
        f = np.asarray(f, dtype=float)
        u = np.zeros(self.n_dofs)
        u[self.interface_dofs] = u_gamma
        if self._lu is not None:
            rhs = f[self.interior_dofs] - self.K_IG @ (self.R @ u_gamma)
            u[self.interior_dofs] = self.solve_interior(rhs)
        return u

    def local_slices(self):
        """Slices of each subdomain in the local-interface layout."""
        o = self.local_iface_offsets
        return [slice(o[k], o[k + 1]) for k in range(len(self.local_ops))]

    def dense(self) -> np.ndarray:
        """Dense ``Ŝ`` assembled from dense local Schur complements (tests only)."""
        S = np.zeros((self.n_interface, self.n_interface))
        for lo in self.local_ops:
            idx = self.iface_pos[lo.dofmap.global_dofs[lo.n_i:]]
            S[np.ix_(idx, idx)] += lo.schur_complement()
        return S


def build_schur(dec: Decomposition, tau: float, c_m: float = 1.0, local_ops=None) -> SchurSystem:
    if local_ops is None:
        local_ops = [assemble_local(dec, i, tau, c_m) for i in range(dec.n_subdomains)]
    return SchurSystem(local_ops=local_ops, n_dofs=dec.n_dofs, interface_dofs=dec.interface_dofs)


def schur_matvec(sys: SchurSystem, x):
    x = np.asarray(x)
    if x.shape != (sys.n_interface,):
        raise ValueError(f"expected interface vector of length {sys.n_interface}")
    return sys.matvec(x)


def reduce_rhs(sys: SchurSystem, f):
    return sys.reduce_rhs(f)


def recover_interior(sys: SchurSystem, u_gamma, f):
    return sys.recover(u_gamma, f)
