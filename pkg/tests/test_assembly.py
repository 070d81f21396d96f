import numpy as np
import pytest
import scipy.sparse as sp

from cellbddc.assembly import (assemble_global, assemble_local, assemble_membrane_blocks, assemble_rhs,
                               assemble_stiffness, bilinear_stiffness, face_mass, jump_mass_matrix,
                               membrane_load_matrix)
from cellbddc.ionic import membrane_layout
from cellbddc.mesh import GeometryConfig, build_decomposition

from oracles import broken_h1_energy as _h1_energy
from oracles import face_jump_energy, q1_grad_energy
from oracles import membrane_energy as _membrane_energy

RNG = np.random.default_rng(1234)


def _dec(cells=(2, 2), elems=(6, 2), **kw):
    return build_decomposition(GeometryConfig(*cells, *elems), **kw)


def test_unit_square_element_matrix():
    ref = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    np.testing.assert_allclose(bilinear_stiffness(1.0, 1.0, 1.0), ref, rtol=0, atol=1e-15)


def test_element_matrix_matches_quadrature():
    hx, hy = 0.3, 0.7
    ke = bilinear_stiffness(hx, hy)
    for _ in range(5):
        u = RNG.standard_normal(4)
        assert u @ ke @ u == pytest.approx(q1_grad_energy(u, hx, hy), rel=1e-12)


def test_stiffness_neumann_properties():
    dec = _dec()
    for i in range(dec.n_subdomains):
        A = assemble_stiffness(dec, i)
        assert abs(A - A.T).max() == 0
        assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-12 * abs(A).max()
    d2 = _dec(sigma_i=3.0, sigma_e=6.0)
    for i in range(dec.n_subdomains):
        np.testing.assert_allclose(assemble_stiffness(d2, i).toarray(), 3.0 * assemble_stiffness(dec, i).toarray(),
                                   rtol=1e-14)


def test_face_mass_single_segment():
    h = 0.37
    np.testing.assert_allclose(face_mass([h]), h / 6 * np.array([[2, 1], [1, 2]]), rtol=1e-15)


def test_membrane_blocks_energy():
    dec = _dec()
    c_m = 1.7
    for f in dec.faces:
        ii, ij, ji, jj = assemble_membrane_blocks(dec, f, c_m)
        B = np.block([[ii, ij], [ji, jj]])
        n = len(f.nodes)
        cont = RNG.standard_normal(n)
        assert np.concatenate([cont, cont]) @ B @ np.concatenate([cont, cont]) == pytest.approx(0, abs=1e-15)
        v = 2.5
        x = np.concatenate([np.full(n, v), np.zeros(n)])
        assert x @ B @ x == pytest.approx(c_m * v * v * f.length, rel=1e-13)


def test_local_matrices_sum_to_global():
    dec = _dec((3, 2), (4, 3))
    tau, c_m = 0.05, 1.3
    K = assemble_global(dec, tau, c_m).K
    S = sp.csr_matrix(K.shape)
    for i in range(dec.n_subdomains):
        lo = assemble_local(dec, i, tau, c_m)
        g = lo.dofmap.global_dofs
        P = sp.csr_matrix((np.ones(len(g)), (np.arange(len(g)), g)), shape=(len(g), dec.n_dofs))
        S = S + P.T @ lo.K @ P
    assert abs(S - K).max() <= 1e-14 * abs(K).max()


def test_zero_tau_keeps_only_membrane_mass():
    dec = _dec()
    for i in range(dec.n_subdomains):
        lo = assemble_local(dec, i, 0.0)
        assert lo.block("I", "I").nnz == 0 or abs(lo.block("I", "I")).max() == 0
        assert abs(lo.K @ np.ones(lo.dofmap.size)).max() < 1e-15


def test_local_energy_identity():
    dec = _dec((2, 2), (4, 2), sigma_i=1.5, sigma_e=2.5)
    tau, c_m = 0.05, 1.2
    for i in range(dec.n_subdomains):
        lo = assemble_local(dec, i, tau, c_m)
        g = lo.dofmap.global_dofs
        for _ in range(5):
            u = RNG.standard_normal(dec.n_dofs)
            ul = u[g]
            expected = tau * dec.sigma[i] * _h1_energy(dec, u, i)
            expected += sum(0.5 * c_m * face_jump_energy(f, u[f.dofs_of(i)], u[f.dofs_of(f.other(i))])
                            for f in dec.faces_of(i))
            assert ul @ lo.K @ ul == pytest.approx(expected, rel=1e-12)


def test_global_operator_properties():
    dec = _dec((3, 2), (4, 3))
    op = assemble_global(dec, 0.05, 1.0)
    K = op.K
    assert abs(K - K.T).max() == 0
    assert np.abs(K @ op.nullspace).max() <= 1e-13 * abs(K).max()
    for _ in range(100):
        u = RNG.standard_normal(dec.n_dofs)
        assert u @ K @ u >= -1e-12 * abs(K).max()


def test_global_coupling_only_through_faces():
    dec = _dec((2, 2), (4, 2))
    K = assemble_global(dec, 0.05).K.tocoo()
    cross = dec.dof_sub[K.row] != dec.dof_sub[K.col]
    pairs = {}
    for f in dec.faces:
        pairs.setdefault((min(f.a, f.b), max(f.a, f.b)), set()).update(f.nodes.tolist())
    for r, c, v in zip(K.row[cross], K.col[cross], K.data[cross]):
        key = tuple(sorted((dec.dof_sub[r], dec.dof_sub[c])))
        assert key in pairs
        assert dec.dof_node[r] in pairs[key] and dec.dof_node[c] in pairs[key]
        assert v <= 0  # −M coupling


def test_broken_norm_matches_quadrature():
    dec = _dec((2, 1), (4, 2), sigma_i=0.7, sigma_e=1.9)
    tau, c_m = 0.02, 1.4
    K = assemble_global(dec, tau, c_m).K
    for _ in range(5):
        u = RNG.standard_normal(dec.n_dofs)
        ref = tau * sum(dec.sigma[i] * _h1_energy(dec, u, i) for i in range(dec.n_subdomains))
        ref += _membrane_energy(dec, u, c_m)
        assert u @ K @ u == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("sig", [(1.0, 1.0), (1.0, 2.0), (0.3, 5.0)])
def test_ellipticity_sandwich(sig):
    s_i, s_e = sig
    dec = _dec((2, 2), (4, 2), sigma_i=s_i, sigma_e=s_e)
    tau = 0.05
    K = assemble_global(dec, tau).K
    smin, smax = min(sig), max(sig)
    for _ in range(20):
        u = RNG.standard_normal(dec.n_dofs)
        h1 = sum(_h1_energy(dec, u, i) for i in range(dec.n_subdomains))
        mem = _membrane_energy(dec, u)
        e = u @ K @ u
        lo, hi = tau * smin * h1 + mem, tau * smax * h1 + mem
        assert lo <= e * (1 + 1e-12) and e <= hi * (1 + 1e-12)
        if smin == smax:
            assert e == pytest.approx(lo, rel=1e-12)


def test_rhs_zero_for_continuous_potential():
    dec = _dec()
    nodal = RNG.standard_normal(dec.n_nodes)
    u = nodal[dec.dof_node]
    f = assemble_rhs(dec, u, None, 0.05)
    assert np.abs(f).max() < 1e-14


def test_rhs_small_tau_limit_returns_previous_potential():
    dec = _dec((2, 1), (4, 2))
    u_prev = RNG.standard_normal(dec.n_dofs)
    # the diffusion part is O(tau / h) relative to the membrane mass
    tau = 1e-12
    f = assemble_rhs(dec, u_prev, None, tau)
    K = assemble_global(dec, tau).K.toarray()
    u = np.linalg.lstsq(K, f, rcond=None)[0]
    # the limit pins down the membrane jumps
    for fc in dec.faces:
        np.testing.assert_allclose(u[fc.dofs_a] - u[fc.dofs_b], u_prev[fc.dofs_a] - u_prev[fc.dofs_b],
                                   atol=1e-6 * np.abs(u_prev).max())


def test_rhs_constant_jump_and_current():
    dec = _dec((1, 1), (4, 2))
    lay = membrane_layout(dec)
    v, F, tau, c_m = 30.0, 2.0, 0.05, 1.3
    u = np.zeros(dec.n_dofs)
    u[dec.dof_offsets[1]:dec.dof_offsets[2]] = v
    f = assemble_rhs(dec, u, np.full(lay.n_nodes, F), tau, c_m, lay)
    perim = sum(fc.length for fc in dec.faces)
    cell = slice(dec.dof_offsets[1], dec.dof_offsets[2])
    assert f[cell].sum() == pytest.approx(perim * (c_m * v - tau * F), rel=1e-13)
    assert f.sum() == pytest.approx(0.0, abs=1e-12)


def test_load_matrix_signs():
    dec = _dec((2, 1), (2, 2))
    lay = membrane_layout(dec)
    L = membrane_load_matrix(dec, lay)
    ones = L @ np.ones(lay.n_nodes)
    assert ones[dec.dof_offsets[1]:].sum() > 0
    assert ones.sum() == pytest.approx(0.0, abs=1e-15)
    M = jump_mass_matrix(dec)
    assert abs(M - M.T).max() == 0
