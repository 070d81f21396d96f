"""Finite element assembly: stiffness, membrane mass couplings, local and global operators.

The membrane term between subdomains ``i`` and ``j`` on a face ``F`` is
``C_m * int_F [u][phi]``.  In the global matrix it contributes ``+C_m M_F`` on
both diagonal blocks and ``-C_m M_F`` on the cross blocks.  Each local matrix
``K'_i`` carries half of it, written on the own face nodes of ``i`` and on the
local copies of the neighbour's face nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Decomposition, DofMap, Face

__all__ = [
    "bilinear_stiffness",
    "face_mass",
    "assemble_stiffness",
    "assemble_membrane_blocks",
    "LocalOperator",
    "assemble_local",
    "GlobalOperator",
    "assemble_global",
    "jump_mass_matrix",
    "membrane_load_matrix",
    "assemble_rhs",
]

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def bilinear_stiffness(hx: float, hy: float, sigma: float = 1.0) -> np.ndarray:
    """Q1 element stiffness of an ``hx`` by ``hy`` rectangle (nodes counter-clockwise).

    Integrated with the 2x2 Gauss rule, which is exact for this integrand.
    """
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    ke = np.zeros((4, 4))
    jac = 0.25 * hx * hy
    for xi in _GAUSS:
        for eta in _GAUSS:
            dxi = 0.25 * corners[:, 0] * (1 + corners[:, 1] * eta)
            deta = 0.25 * corners[:, 1] * (1 + corners[:, 0] * xi)
            grad = np.column_stack([dxi * 2.0 / hx, deta * 2.0 / hy])
            ke += grad @ grad.T * jac
    return sigma * ke


def face_mass(segment_lengths) -> np.ndarray:
    """Consistent P1 mass matrix along a polyline with the given segment lengths."""
    seg = np.asarray(segment_lengths, dtype=float)
    n = len(seg) + 1
    m = np.zeros((n, n))
    idx = np.arange(len(seg))
    np.add.at(m, (idx, idx), seg / 3.0)
    np.add.at(m, (idx + 1, idx + 1), seg / 3.0)
    m[idx, idx + 1] += seg / 6.0
    m[idx + 1, idx] += seg / 6.0
    return m


def assemble_stiffness(dec: Decomposition, i: int) -> sp.csr_matrix:
    """Pure Neumann stiffness ``A_i`` on the own nodes of subdomain ``i``.

    Rows and columns follow ``dec.sub_nodes[i]`` (ascending node id).
    """
    cfg = dec.cfg
    ke = bilinear_stiffness(cfg.hx, cfg.hy, dec.sigma[i])
    en = dec.element_nodes(dec.sub_elements(i))
    loc = np.searchsorted(dec.sub_nodes[i], en)
    rows = np.repeat(loc, 4, axis=1).ravel()
    cols = np.tile(loc, (1, 4)).ravel()
    vals = np.tile(ke.ravel(), len(loc))
    n = len(dec.sub_nodes[i])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_membrane_blocks(dec: Decomposition, face: Face, c_m: float = 1.0):
    """Return ``(ii, ij, ji, jj)`` membrane blocks of ``face`` in face-node order.

    ``ii`` and ``jj`` are ``+C_m M_F``; ``ij`` and ``ji`` are ``-C_m M_F``.
    """
    if len(face.dofs_a) != len(face.dofs_b) or len(face.dofs_a) != len(face.segment_lengths) + 1:
        raise ValueError("face node pairing is inconsistent")
    m = c_m * face_mass(face.segment_lengths)
    return m, -m, -m.copy(), m.copy()


def _coo_block(rows, cols, block):
    r = np.repeat(rows, len(cols))
    c = np.tile(cols, len(rows))
    return r, c, np.asarray(block).ravel()


@dataclass(eq=False)
class LocalOperator:
    """Local matrix ``K'_i`` on ``W_i(Ω_i′)`` ordered interior / dual / primal."""

    sub: int
    dofmap: DofMap
    K: sp.csr_matrix
    tau: float

    @property
    def n_i(self) -> int:
        return self.dofmap.n_interior

    @property
    def n_d(self) -> int:
        return self.dofmap.n_dual

    @property
    def n_p(self) -> int:
        return self.dofmap.n_primal

    def block(self, rows: str, cols: str) -> sp.csr_matrix:
        """Sub-block by label, e.g. ``block("I", "D")``; ``G`` means the whole interface."""
        sl = {
            "I": slice(0, self.n_i),
            "D": slice(self.n_i, self.n_i + self.n_d),
            "P": slice(self.n_i + self.n_d, self.dofmap.size),
            "G": slice(self.n_i, self.dofmap.size),
            "ID": slice(0, self.n_i + self.n_d),
        }
        return self.K[sl[rows], :][:, sl[cols]].tocsr()

    @cached_property
    def interior_factor(self):
        kii = self.block("I", "I").tocsc()
        return spd_factor(kii)

    @cached_property
    def interior_dual_factor(self):
        return spd_factor(self.block("ID", "ID"))

    def schur_complement(self) -> np.ndarray:
        """Dense ``S'_i`` (small problems only)."""
        kgg = self.block("G", "G").toarray()
        if self.n_i == 0:
            return kgg
        kgi = self.block("G", "I").toarray()
        x = self.interior_factor.solve(kgi.T.copy())
        s = kgg - kgi @ x
        return 0.5 * (s + s.T)


def assemble_local(dec: Decomposition, i: int, tau: float, c_m: float = 1.0) -> LocalOperator:
    """``K'_i = tau * A_i + 1/2 * (membrane blocks of every face touching i)``."""
    dm = dec.dofmaps[i]
    a = assemble_stiffness(dec, i).tocoo()
    own_local = dm.local_index(dec.dof_offsets[i] + np.arange(len(dec.sub_nodes[i])))
    rows = [own_local[a.row]]
    cols = [own_local[a.col]]
    vals = [tau * a.data]
    for f in dec.faces_of(i):
        own = dm.local_index(f.dofs_of(i))
        cpy = dm.local_index(f.dofs_of(f.other(i)))
        m = 0.5 * c_m * face_mass(f.segment_lengths)
        for r_idx, c_idx, sign in ((own, own, 1.0), (own, cpy, -1.0), (cpy, own, -1.0), (cpy, cpy, 1.0)):
            r, c, v = _coo_block(r_idx, c_idx, sign * m)
            rows.append(r)
            cols.append(c)
            vals.append(v)
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dm.size, dm.size))
    K.sum_duplicates()
    return LocalOperator(sub=i, dofmap=dm, K=K, tau=tau)


@dataclass(eq=False)
class GlobalOperator:
    """Assembled ``𝒦`` over all DOFs (with interface multiplicity)."""

    K: sp.csr_matrix
    tau: float
    c_m: float
    sigma: np.ndarray

    @property
    def nullspace(self) -> np.ndarray:
        return np.ones(self.K.shape[0])


def jump_mass_matrix(dec: Decomposition, c_m: float = 1.0) -> sp.csr_matrix:
    """Global membrane matrix: ``+C_m M_F`` diagonal and ``-C_m M_F`` cross blocks per face."""
    rows, cols, vals = [], [], []
    for f in dec.faces:
        ii, ij, ji, jj = assemble_membrane_blocks(dec, f, c_m)
        for r_idx, c_idx, blk in ((f.dofs_a, f.dofs_a, ii), (f.dofs_a, f.dofs_b, ij),
                                  (f.dofs_b, f.dofs_a, ji), (f.dofs_b, f.dofs_b, jj)):
            r, c, v = _coo_block(r_idx, c_idx, blk)
            rows.append(r)
            cols.append(c)
            vals.append(v)
    n = dec.n_dofs
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M.sum_duplicates()
    return M


def assemble_global(dec: Decomposition, tau: float, c_m: float = 1.0) -> GlobalOperator:
    """Assemble ``𝒦 = tau * blockdiag(A_i) + membrane couplings`` directly from the faces."""
    blocks = [assemble_stiffness(dec, i) for i in range(dec.n_subdomains)]
    K = tau * sp.block_diag(blocks, format="csr") + jump_mass_matrix(dec, c_m)
    K = K.tocsr()
    K.sum_duplicates()
    return GlobalOperator(K=K, tau=tau, c_m=c_m, sigma=dec.sigma)


def membrane_load_matrix(dec: Decomposition, membrane) -> sp.csr_matrix:
    """Map per-membrane-node currents to the global load ``sum_F M_F F [phi]``.

    ``membrane`` provides ``face_nodes[k]``: indices into the membrane node list
    for the nodes of ``dec.faces[k]``.  The load enters the ``a`` side with a
    plus sign and the ``b`` side with a minus sign.
    """
    rows, cols, vals = [], [], []
    for f, idx in zip(dec.faces, membrane.face_nodes):
        m = face_mass(f.segment_lengths)
        for dofs, sign in ((f.dofs_a, 1.0), (f.dofs_b, -1.0)):
            r, c, v = _coo_block(dofs, idx, sign * m)
            rows.append(r)
            cols.append(c)
            vals.append(v)
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dec.n_dofs, membrane.n_nodes))
    L.sum_duplicates()
    return L


def assemble_rhs(dec: Decomposition, u_prev, ion_current, tau: float, c_m: float = 1.0,
                 membrane=None, *, jump_mass=None, load=None) -> np.ndarray:
    """Right-hand side ``C_m M_jump u_prev - tau * (membrane load of F)``.

    ``ion_current`` holds one value (µA/cm²) per membrane node of ``membrane``;
    pass ``None`` for a zero current.  ``jump_mass`` and ``load`` may be given
    to reuse pre-assembled matrices.
    """
    if jump_mass is None:
        jump_mass = jump_mass_matrix(dec, c_m)
    f = jump_mass @ np.asarray(u_prev, dtype=float)
    if ion_current is not None:
        if load is None:
            if membrane is None:
                raise ValueError("membrane node layout required to load ionic currents")
            load = membrane_load_matrix(dec, membrane)
        f -= tau * (load @ np.asarray(ion_current, dtype=float))
    return f


def spd_factor(A):
    """Sparse LU with a symmetric fill-reducing ordering, used for SPD blocks."""
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})
