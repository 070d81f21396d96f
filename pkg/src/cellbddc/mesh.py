"""Structured cell-lattice geometry and hybrid-DG degree-of-freedom maps.

The domain is a rectangle of bilinear quadrilateral elements.  A lattice of
``cells_x * cells_y`` rectangular cells sits in the middle; every element that
is not inside a cell belongs to the extracellular subdomain 0, which frames
the lattice.  Subdomain ``1 + cx + cells_x * cy`` is the cell in column ``cx``
and row ``cy``, counted from the lower-left corner.

Each subdomain carries its own copy of every node in its closure, so a node
shared by ``m`` subdomains has ``m`` global degrees of freedom.  Faces are the
straight sides of the cells; their endpoints (the lattice vertices) are the
primal corners.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GeometryConfig",
    "Face",
    "DofMap",
    "PrimalDual",
    "Decomposition",
    "build_decomposition",
    "enumerate_dofs",
    "classify_primal_dual",
    "dump_mesh",
]

# local DOF classes
INTERIOR, DUAL, PRIMAL = 0, 1, 2
CLASS_LABELS = {INTERIOR: "I", DUAL: "Δ", PRIMAL: "Π"}


@dataclass(frozen=True)
class GeometryConfig:
    """Cell lattice parameters.

    Lengths are in cm.  ``frame_layers`` is the number of extracellular element
    layers around the lattice; ``frame_layers_y`` overrides it for the top and
    bottom strips when given.
    """

    cells_x: int = 2
    cells_y: int = 2
    elems_x: int = 24
    elems_y: int = 4
    cell_width: float = 0.012
    cell_height: float = 0.002
    frame_layers: int = 1
    frame_layers_y: int | None = None

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1:
            raise ValueError("cells_x and cells_y must be >= 1")
        if self.elems_x < 2 or self.elems_y < 2:
            raise ValueError("elems_x and elems_y must be >= 2 so every face has a dual node")
        if not (self.cell_width > 0 and self.cell_height > 0):
            raise ValueError("cell dimensions must be positive")
        if self.frame_layers < 1 or (self.frame_layers_y is not None and self.frame_layers_y < 1):
            raise ValueError("frame_layers must be >= 1")

    @property
    def frame_x(self) -> int:
        return self.frame_layers

    @property
    def frame_y(self) -> int:
        return self.frame_layers if self.frame_layers_y is None else self.frame_layers_y

    @property
    def hx(self) -> float:
        return self.cell_width / self.elems_x

    @property
    def hy(self) -> float:
        return self.cell_height / self.elems_y

    @property
    def h(self) -> float:
        """Mesh size (longest element side)."""
        return max(self.hx, self.hy)

    @property
    def H_over_h(self) -> int:
        return max(self.elems_x, self.elems_y)

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y


@dataclass(frozen=True)
class Face:
    """A straight membrane segment between subdomains ``a`` and ``b``.

    ``a`` is the cell side (for cell-extracellular faces ``b == 0``; for
    gap junctions ``a < b``).  ``dofs_a[k]`` and ``dofs_b[k]`` are the two
    copies of geometric node ``nodes[k]``, ordered along the face.
    """

    a: int
    b: int
    nodes: np.ndarray
    dofs_a: np.ndarray
    dofs_b: np.ndarray
    segment_lengths: np.ndarray

    @property
    def kind(self) -> str:
        return "ionic" if self.b == 0 else "gap"

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    def other(self, i: int) -> int:
        return self.b if i == self.a else self.a

    def dofs_of(self, i: int) -> np.ndarray:
        return self.dofs_a if i == self.a else self.dofs_b


@dataclass(frozen=True)
class DofMap:
    """Local space of subdomain ``sub``: own nodes plus copies of neighbour face nodes.

    Local DOFs are ordered interior, dual, primal.  ``global_dofs[k]`` is the
    global DOF represented by local DOF ``k``; for copies this is a DOF owned
    by another subdomain.
    """

    sub: int
    global_dofs: np.ndarray
    is_copy: np.ndarray
    n_interior: int
    n_dual: int
    n_primal: int

    @property
    def size(self) -> int:
        return len(self.global_dofs)

    @property
    def n_interface(self) -> int:
        return self.n_dual + self.n_primal

    @property
    def interior(self) -> np.ndarray:
        return np.arange(self.n_interior)

    @property
    def dual(self) -> np.ndarray:
        return np.arange(self.n_interior, self.n_interior + self.n_dual)

    @property
    def primal(self) -> np.ndarray:
        return np.arange(self.n_interior + self.n_dual, self.size)

    @property
    def gamma_own(self) -> np.ndarray:
        """Local indices of the subdomain's own interface nodes (the set Γ_i)."""
        idx = np.arange(self.n_interior, self.size)
        return idx[~self.is_copy[idx]]

    @property
    def copies(self) -> np.ndarray:
        return np.flatnonzero(self.is_copy)

    @property
    def labels(self) -> np.ndarray:
        lab = np.full(self.size, INTERIOR)
        lab[self.dual] = DUAL
        lab[self.primal] = PRIMAL
        return lab

    def local_index(self, gdofs) -> np.ndarray:
        """Map global DOF ids to local indices (raises KeyError if absent)."""
        lookup = self._lookup
        order, keys = lookup
        gdofs = np.asarray(gdofs)
        pos = np.searchsorted(keys, gdofs)
        pos = np.clip(pos, 0, len(keys) - 1)
        if np.any(keys[pos] != gdofs):
            raise KeyError(f"DOF not in local space of subdomain {self.sub}")
        return order[pos]

    @cached_property
    def _lookup(self):
        order = np.argsort(self.global_dofs, kind="stable")
        return order, self.global_dofs[order]


@dataclass(frozen=True)
class PrimalDual:
    """Global primal classes and dual DOFs.

    ``primal_dofs[c]`` is the global DOF of primal class ``c``; its members
    are that DOF in its owner plus every copy held by neighbours.
    ``local_primal_class[i]`` gives, for subdomain ``i``, the class of each
    local primal DOF (in local order); ``local_dual_dofs[i]`` the global DOF
    behind each local dual DOF.
    """

    primal_dofs: np.ndarray
    dual_dofs: np.ndarray
    local_primal_class: list
    local_dual_dofs: list
    members: list = field(repr=False)

    @property
    def n_primal(self) -> int:
        return len(self.primal_dofs)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Immutable geometry + DOF numbering of the whole decomposition."""

    cfg: GeometryConfig
    sigma: np.ndarray
    nx: int
    ny: int
    elem_owner: np.ndarray
    sub_nodes: list
    dof_offsets: np.ndarray
    faces: list
    corner_mask: np.ndarray
    dofmaps: list = field(repr=False)

    @property
    def n_subdomains(self) -> int:
        return len(self.sub_nodes)

    @property
    def n_dofs(self) -> int:
        return int(self.dof_offsets[-1])

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def node_coords(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes)
        p = nodes % (self.nx + 1)
        q = nodes // (self.nx + 1)
        return np.column_stack([p * self.cfg.hx, q * self.cfg.hy])

    @cached_property
    def dof_sub(self) -> np.ndarray:
        counts = np.diff(self.dof_offsets)
        return np.repeat(np.arange(self.n_subdomains), counts)

    @cached_property
    def dof_node(self) -> np.ndarray:
        return np.concatenate(self.sub_nodes)

    @cached_property
    def node_multiplicity(self) -> np.ndarray:
        return np.bincount(self.dof_node, minlength=self.n_nodes)

    @cached_property
    def interface_dofs(self) -> np.ndarray:
        """Global DOFs on the broken interface Γ′ (sorted)."""
        return np.flatnonzero(self.node_multiplicity[self.dof_node] >= 2)

    def dof(self, sub: int, nodes) -> np.ndarray:
        """Global DOF of geometric ``nodes`` in subdomain ``sub``."""
        own = self.sub_nodes[sub]
        nodes = np.asarray(nodes)
        pos = np.searchsorted(own, nodes)
        pos = np.clip(pos, 0, len(own) - 1)
        if np.any(own[pos] != nodes):
            raise KeyError(f"node not in closure of subdomain {sub}")
        return self.dof_offsets[sub] + pos

    def faces_of(self, i: int) -> list:
        return [f for f in self._faces_by_sub[i]]

    @cached_property
    def _faces_by_sub(self) -> list:
        out = [[] for _ in range(self.n_subdomains)]
        for f in self.faces:
            out[f.a].append(f)
            out[f.b].append(f)
        return out

    def neighbours(self, i: int) -> list:
        """Indices j sharing at least one face with subdomain i (the set F_i^0)."""
        return sorted({f.other(i) for f in self._faces_by_sub[i]})

    def sub_elements(self, i: int) -> np.ndarray:
        """Flat element ids (row-major, ``ey * nx + ex``) of subdomain ``i``."""
        return np.flatnonzero(self.elem_owner.ravel() == i)

    def element_nodes(self, elems) -> np.ndarray:
        """Counter-clockwise node ids of the given flat element ids."""
        elems = np.asarray(elems)
        ex = elems % self.nx
        ey = elems // self.nx
        n0 = ey * (self.nx + 1) + ex
        return np.column_stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1])

    @cached_property
    def dof_mass_weight(self) -> np.ndarray:
        """Integral of each global nodal basis function over its subdomain."""
        w = np.zeros(self.n_dofs)
        quarter = 0.25 * self.cfg.hx * self.cfg.hy
        for i in range(self.n_subdomains):
            en = self.element_nodes(self.sub_elements(i))
            np.add.at(w, self.dof(i, en.ravel()), quarter)
        return w


def _sigma_array(sigma, sigma_i: float, sigma_e: float, n_sub: int) -> np.ndarray:
    if sigma is None:
        out = np.full(n_sub, float(sigma_i))
        out[0] = sigma_e
    else:
        out = np.array(sigma, dtype=float)
        if out.shape != (n_sub,):
            raise ValueError(f"sigma has shape {out.shape}, expected ({n_sub},)")
    if np.any(out <= 0):
        raise ValueError("conductivities must be positive")
    return out


def build_decomposition(cfg: GeometryConfig, sigma=None, *, sigma_i: float = 1.0,
                        sigma_e: float = 2.0) -> Decomposition:
    """Build the framed cell lattice and all DOF maps.

    ``sigma`` gives one conductivity (mS/cm) per subdomain, index 0 being the
    extracellular space; when omitted every cell gets ``sigma_i`` and the
    extracellular space ``sigma_e``.
    """
    fx, fy = cfg.frame_x, cfg.frame_y
    ex, ey = cfg.elems_x, cfg.elems_y
    nx = 2 * fx + cfg.cells_x * ex
    ny = 2 * fy + cfg.cells_y * ey
    n_sub = cfg.n_cells + 1
    sig = _sigma_array(sigma, sigma_i, sigma_e, n_sub)

    owner = np.zeros((ny, nx), dtype=np.int64)
    for cy in range(cfg.cells_y):
        for cx in range(cfg.cells_x):
            owner[fy + cy * ey: fy + (cy + 1) * ey, fx + cx * ex: fx + (cx + 1) * ex] = 1 + cx + cfg.cells_x * cy

    # node closure of each subdomain
    stride = nx + 1
    sub_nodes = []
    flat_owner = owner.ravel()
    all_elems = np.arange(nx * ny)
    e_x = all_elems % nx
    e_y = all_elems // nx
    n0 = e_y * stride + e_x
    elem_nodes = np.column_stack([n0, n0 + 1, n0 + stride + 1, n0 + stride])
    for i in range(n_sub):
        sub_nodes.append(np.unique(elem_nodes[flat_owner == i]))
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in sub_nodes])])

    corner = np.zeros((ny + 1) * stride, dtype=bool)
    for cy in range(cfg.cells_y + 1):
        for cx in range(cfg.cells_x + 1):
            corner[(fy + cy * ey) * stride + fx + cx * ex] = True

    def dof_of(sub, nodes):
        own = sub_nodes[sub]
        return offsets[sub] + np.searchsorted(own, nodes)

    def cell_id(cx, cy):
        if 0 <= cx < cfg.cells_x and 0 <= cy < cfg.cells_y:
            return 1 + cx + cfg.cells_x * cy
        return 0

    faces = []
    for cy in range(cfg.cells_y):
        for cx in range(cfg.cells_x):
            c = cell_id(cx, cy)
            p0, q0 = fx + cx * ex, fy + cy * ey
            horiz = np.arange(ex + 1)
            vert = np.arange(ey + 1)
            sides = {
                "bottom": (cell_id(cx, cy - 1), q0 * stride + p0 + horiz, cfg.hx, ex),
                "top": (cell_id(cx, cy + 1), (q0 + ey) * stride + p0 + horiz, cfg.hx, ex),
                "left": (cell_id(cx - 1, cy), (q0 + vert) * stride + p0, cfg.hy, ey),
                "right": (cell_id(cx + 1, cy), (q0 + vert) * stride + p0 + ex, cfg.hy, ey),
            }
            for other, nodes, seg, nseg in sides.values():
                if other != 0 and other < c:
                    continue  # gap junction already created from the lower-index cell
                faces.append(Face(
                    a=c, b=other, nodes=nodes,
                    dofs_a=dof_of(c, nodes), dofs_b=dof_of(other, nodes),
                    segment_lengths=np.full(nseg, seg),
                ))

    dec = Decomposition(
        cfg=cfg, sigma=sig, nx=nx, ny=ny, elem_owner=owner, sub_nodes=sub_nodes,
        dof_offsets=offsets, faces=faces, corner_mask=corner, dofmaps=[],
    )
    dec.dofmaps.extend(_build_dofmap(dec, i) for i in range(n_sub))
    return dec


def _build_dofmap(dec: Decomposition, i: int) -> DofMap:
    own_nodes = dec.sub_nodes[i]
    own_dofs = dec.dof_offsets[i] + np.arange(len(own_nodes))
    mult = dec.node_multiplicity[own_nodes]
    own_iface = mult >= 2
    own_corner = dec.corner_mask[own_nodes] & own_iface

    copy_dofs, copy_nodes = [], []
    for f in dec.faces_of(i):
        copy_dofs.append(f.dofs_of(f.other(i)))
        copy_nodes.append(f.nodes)
    if copy_dofs:
        cd, first = np.unique(np.concatenate(copy_dofs), return_index=True)
        cn = np.concatenate(copy_nodes)[first]
    else:
        cd = np.zeros(0, dtype=np.int64)
        cn = cd
    copy_corner = dec.corner_mask[cn]

    interior = own_dofs[~own_iface]
    dual = np.concatenate([own_dofs[own_iface & ~own_corner], cd[~copy_corner]])
    primal = np.concatenate([own_dofs[own_corner], cd[copy_corner]])
    gd = np.concatenate([interior, dual, primal]).astype(np.int64)
    is_copy = np.concatenate([
        np.zeros(len(interior), bool),
        np.r_[np.zeros(int((own_iface & ~own_corner).sum()), bool), np.ones(int((~copy_corner).sum()), bool)],
        np.r_[np.zeros(int(own_corner.sum()), bool), np.ones(int(copy_corner.sum()), bool)],
    ])
    return DofMap(sub=i, global_dofs=gd, is_copy=is_copy,
                  n_interior=len(interior), n_dual=len(dual), n_primal=len(primal))


def enumerate_dofs(dec: Decomposition, i: int) -> DofMap:
    """Local DOF map of W_i(Ω_i′) for subdomain ``i``."""
    if not 0 <= i < dec.n_subdomains:
        raise IndexError(f"subdomain {i} out of range 0..{dec.n_subdomains - 1}")
    return dec.dofmaps[i]


def classify_primal_dual(dec: Decomposition) -> PrimalDual:
    """Group local interface DOFs into global primal classes and dual DOFs."""
    iface = dec.interface_dofs
    is_primal = dec.corner_mask[dec.dof_node[iface]]
    primal_dofs = iface[is_primal]
    dual_dofs = iface[~is_primal]
    class_of = np.full(dec.n_dofs, -1, dtype=np.int64)
    class_of[primal_dofs] = np.arange(len(primal_dofs))
    members = [[] for _ in primal_dofs]
    local_primal_class, local_dual_dofs = [], []
    for dm in dec.dofmaps:
        cls = class_of[dm.global_dofs[dm.primal]]
        assert np.all(cls >= 0)
        local_primal_class.append(cls)
        local_dual_dofs.append(dm.global_dofs[dm.dual])
        for k, c in zip(dm.primal, cls):
            members[c].append((dm.sub, int(k)))
    return PrimalDual(primal_dofs=primal_dofs, dual_dofs=dual_dofs,
                      local_primal_class=local_primal_class,
                      local_dual_dofs=local_dual_dofs, members=members)


def dump_mesh(dec: Decomposition, path) -> None:
    """Write one line per local DOF: ``subdomain, local_index, x, y, class``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("subdomain,local_index,x,y,class\n")
        for dm in dec.dofmaps:
            xy = dec.node_coords(dec.dof_node[dm.global_dofs])
            for k, (lab, (x, y)) in enumerate(zip(dm.labels, xy)):
                fh.write(f"{dm.sub},{k},{x:.10g},{y:.10g},{CLASS_LABELS[lab]}\n")
