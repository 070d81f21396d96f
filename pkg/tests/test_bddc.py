import numpy as np
import pytest
import scipy.sparse as sp

from cellbddc.assembly import LocalOperator
from cellbddc.bddc import (BddcPreconditioner, apply_bddc, build_bddc, build_coarse, build_scaling,
                           rho_weights)
from cellbddc.krylov import pcg
from cellbddc.mesh import DofMap, GeometryConfig, build_decomposition, classify_primal_dual
from cellbddc.schur import build_schur

from oracles import constrained_min_energy

RNG = np.random.default_rng(11)
TAU = 0.05


def _setup(cells=(2, 1), elems=(4, 2), sig=(1.0, 2.0)):
    dec = build_decomposition(GeometryConfig(*cells, *elems), sigma_i=sig[0], sigma_e=sig[1])
    sys = build_schur(dec, TAU)
    return dec, sys, build_bddc(dec, sys)


@pytest.fixture(scope="module")
def small():
    return _setup()


def _toy_local(K, n_i, n_d, n_p):
    n = K.shape[0]
    dm = DofMap(sub=0, global_dofs=np.arange(n), is_copy=np.zeros(n, bool), n_interior=n_i, n_dual=n_d,
                n_primal=n_p)
    return LocalOperator(sub=0, dofmap=dm, K=sp.csr_matrix(K), tau=1.0)


def test_rho_weight_examples():
    np.testing.assert_allclose(rho_weights([1.0, 1.0]), [0.5, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(rho_weights([1.0, 3.0]), [0.25, 0.75], rtol=0, atol=1e-15)
    np.testing.assert_allclose(rho_weights([2.0, 1.0, 1.0]), [0.5, 0.25, 0.25], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        rho_weights([1.0, 0.0])


@pytest.mark.parametrize("sig", [(1.0, 1.0), (1.0, 3.0), (0.001, 0.002)])
def test_scaling_partition_of_unity(sig):
    dec, sys, _ = _setup((2, 2), (6, 2), sig)
    sc = build_scaling(dec, sys)
    total = sys.R.T @ sc.weights
    assert np.abs(total - 1.0).max() <= 1e-15
    assert np.all((sc.weights > 0) & (sc.weights <= 1))


def test_scaling_uses_member_conductivities():
    dec, sys, _ = _setup((2, 1), (4, 2), (1.0, 3.0))
    sc = build_scaling(dec, sys)
    for k, g in enumerate(sys.local_iface_gdofs):
        holders = [i for i, dm in enumerate(dec.dofmaps) if g in dm.global_dofs[dm.n_interior:]]
        assert sc.weights[k] == pytest.approx(dec.sigma[_holder(sys, k)] / dec.sigma[holders].sum(), rel=1e-15)
    # a DOF shared by Ω_0 (σ=3) and one cell (σ=1) gets 0.75 / 0.25
    assert np.isclose(sc.weights, 0.75).any() and np.isclose(sc.weights, 0.25).any()


def _holder(sys, k):
    for i, sl in enumerate(sys.local_slices()):
        if sl.start <= k < sl.stop:
            return i
    raise IndexError(k)


def test_scaling_rejects_nonpositive_sigma():
    dec = build_decomposition(GeometryConfig(1, 1, 2, 2))
    dec.sigma[1] = 0.0
    with pytest.raises(ValueError):
        build_scaling(dec)


def _full_phi(sys, pre, pd):
    """Φ on the local-interface layout: dual rows from the basis, primal rows the class indicators."""
    Phi = np.zeros((sys.n_local_interface, pre.n_primal))
    Phi[pre.dual_mask] = pre.Phi_dual.toarray()
    for sl, lo, cls in zip(sys.local_slices(), sys.local_ops, pd.local_primal_class):
        Phi[np.arange(sl.start + lo.n_d, sl.stop), cls] = 1.0
    return Phi


def test_phi_primal_rows_are_identity(small):
    dec, sys, pre = small
    pd = classify_primal_dual(dec)
    Phi = _full_phi(sys, pre, pd)
    prim = Phi[~pre.dual_mask]
    # every primal copy row is a unit vector, and each class has at least one row
    np.testing.assert_array_equal(prim.sum(axis=1), 1.0)
    np.testing.assert_array_equal(np.sort(np.unique(prim.argmax(axis=1))), np.arange(pre.n_primal))
    # the coarse matrix is the S' energy of the basis
    SPhi = np.column_stack([sys.local_schur_apply(c) for c in Phi.T])
    np.testing.assert_allclose(Phi.T @ SPhi, pre.S_PP.toarray(), rtol=0, atol=1e-10 * np.abs(SPhi).max())


def test_coarse_single_class_toy():
    K = np.array([[4.0, -1.0, -1.0], [-1.0, 4.0, -1.0], [-1.0, -1.0, 3.0]])
    lo = _toy_local(K, 2, 0, 1)
    Phi, S = build_coarse([lo], [np.array([0])], 1)
    ref = K[2, 2] - K[2, :2] @ np.linalg.solve(K[:2, :2], K[:2, 2])
    assert S.toarray()[0, 0] == pytest.approx(ref, rel=1e-14)
    assert Phi.shape == (0, 1)


def test_coarse_basis_is_energy_minimal(small):
    dec, sys, pre = small
    pd = classify_primal_dual(dec)
    Sloc = [lo.schur_complement() for lo in sys.local_ops]
    Phi = pre.Phi_dual.toarray()
    S_pp = pre.S_PP.toarray()
    for p in range(pre.n_primal):
        energy, d_off = 0.0, 0
        for lo, S_i, cls in zip(sys.local_ops, Sloc, pd.local_primal_class):
            prim = np.arange(lo.n_d, lo.n_d + lo.n_p)
            e_ref, u_ref = constrained_min_energy(S_i, prim, (np.asarray(cls) == p).astype(float))
            np.testing.assert_allclose(Phi[d_off:d_off + lo.n_d, p], u_ref[:lo.n_d], rtol=1e-9,
                                       atol=1e-9 * max(1.0, np.abs(u_ref).max()))
            energy += e_ref
            d_off += lo.n_d
        assert S_pp[p, p] == pytest.approx(energy, rel=1e-9)


def test_coarse_matrix_psd_with_constant_kernel(small):
    _, _, pre = small
    S = pre.S_PP.toarray()
    assert np.abs(S - S.T).max() <= 1e-12 * np.abs(S).max()
    ev = np.linalg.eigvalsh(S)
    assert ev[0] >= -1e-10 * ev[-1]
    assert np.abs(S @ np.ones(len(S))).max() <= 1e-10 * np.abs(S).max()
    assert pre.grounded is not None


def test_apply_is_symmetric(small):
    _, sys, pre = small
    for _ in range(10):
        r, s = RNG.standard_normal((2, sys.n_interface))
        a, b = r @ apply_bddc(pre, s), s @ apply_bddc(pre, r)
        assert a == pytest.approx(b, rel=1e-12)


def test_apply_is_positive_off_kernel(small):
    _, sys, pre = small
    for _ in range(100):
        r = RNG.standard_normal(sys.n_interface)
        r -= r.mean()
        assert r @ pre.apply(r) > 0


def test_apply_rejects_wrong_length(small):
    _, sys, pre = small
    with pytest.raises(ValueError):
        apply_bddc(pre, np.ones(sys.n_interface - 1))


def test_single_subdomain_is_exact_solver():
    from cellbddc.schur import SchurSystem
    A = RNG.standard_normal((6, 6))
    K = A @ A.T + 6 * np.eye(6)
    lo = _toy_local(K, 2, 4, 0)
    sys = SchurSystem(local_ops=[lo], n_dofs=6, interface_dofs=np.arange(2, 6))
    pre = BddcPreconditioner(sys, np.zeros(0, np.int64), [np.zeros(0, np.int64)], np.ones(4))
    b = RNG.standard_normal(4)
    x, rep = pcg(sys.matvec, b, pre, tol=1e-12)
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, np.linalg.solve(sys.dense(), b), rtol=1e-10)


@pytest.mark.parametrize("sig", [(1.0, 2.0), (0.001, 0.002)])
def test_preconditioned_spectrum_lower_bound(sig):
    dec, sys, pre = _setup((2, 2), (6, 2), sig)
    S = sys.dense()
    Minv = np.column_stack([pre.apply(e) for e in np.eye(sys.n_interface)])
    # restrict to the complement of the constant kernel
    Q = np.linalg.qr(np.column_stack([np.ones(sys.n_interface), RNG.standard_normal((sys.n_interface,
                                                                                      sys.n_interface - 1))]))[0][:, 1:]
    ev = np.linalg.eigvals(Q.T @ Minv @ S @ Q).real
    assert ev.min() >= 1 - 1e-8
