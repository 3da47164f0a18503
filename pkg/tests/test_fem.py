import math

import numpy as np
import pytest
import scipy.linalg as sla

from msrb import fem, mesh
from conftest import DOMAIN, cfmap


def _dense_oracle(grid, v=None, nq=6):
    """Brute-force quadrature over every cell with explicit hat functions."""
    s, w = np.polynomial.legendre.leggauss(nq)
    n = grid.n_nodes
    S = np.zeros((n, n))
    M = np.zeros((n, n))
    V = np.zeros((n, n))
    shape = grid.shape
    h = grid.spacing
    for cell in np.ndindex(*shape):
        # local nodes and their 1D hat restrictions
        for qp in np.ndindex(*([nq] * grid.dim)):
            t = [0.5 * (s[i] + 1) for i in qp]
            wt = np.prod([0.5 * w[i] * hk for i, hk in zip(qp, h)])
            vals, grads, ids = [], [], []
            for corner in np.ndindex(*([2] * grid.dim)):
                phi = [t[a] if corner[a] else 1 - t[a] for a in range(grid.dim)]
                dphi = [(1 if corner[a] else -1) / h[a] for a in range(grid.dim)]
                val = np.prod(phi)
                grad = [dphi[a] * np.prod([phi[b] for b in range(grid.dim) if b != a])
                        for a in range(grid.dim)]
                idx = np.ravel_multi_index([(cell[a] + corner[a]) % shape[a]
                                            for a in range(grid.dim)], shape)
                vals.append(val)
                grads.append(np.array(grad))
                ids.append(idx)
            vq = 0.0 if v is None else sum(v[i] * p for i, p in zip(ids, vals))
            for a, ia in enumerate(ids):
                for b, ib in enumerate(ids):
                    M[ia, ib] += wt * vals[a] * vals[b]
                    S[ia, ib] += wt * grads[a] @ grads[b]
                    V[ia, ib] += wt * vq * vals[a] * vals[b]
    return S, M, V


@pytest.mark.parametrize("dim,n", [(1, 7), (1, 16), (2, 4), (2, 5)])
def test_assembly_matches_bruteforce(dim, n, rng):
    g = mesh.build_grid(dim, DOMAIN, n)
    v = rng.normal(size=g.n_nodes)
    S, M, V = _dense_oracle(g, v)
    np.testing.assert_allclose(fem.assemble_S(g).toarray(), S, atol=1e-12)
    np.testing.assert_allclose(fem.assemble_M(g).toarray(), M, atol=1e-12)
    np.testing.assert_allclose(fem.assemble_V(g, v).toarray(), V, atol=1e-12)


def test_1d_stencils():
    g = mesh.build_grid(1, DOMAIN, 10)
    h = g.spacing[0]
    S = fem.assemble_S(g).toarray()
    M = fem.assemble_M(g).toarray()
    assert S[3, 3] == pytest.approx(2 / h) and S[3, 4] == pytest.approx(-1 / h)
    assert S[0, 9] == pytest.approx(-1 / h)
    assert M[3, 3] == pytest.approx(2 * h / 3) and M[3, 2] == pytest.approx(h / 6)
    np.testing.assert_allclose(S.sum(axis=1), 0, atol=1e-12)
    assert M.sum() == pytest.approx(2 * math.pi)
    sla.cholesky(M)


def test_2d_stiffness_single_zero_mode():
    g = mesh.build_grid(2, DOMAIN, 4)
    S = fem.assemble_S(g).toarray()
    ev = np.linalg.eigvalsh(S)
    assert np.allclose(S, S.T, atol=1e-14)
    assert abs(ev[0]) < 1e-12 and ev[1] > 1e-3
    assert fem.assemble_M(g).toarray().sum() == pytest.approx(4 * math.pi ** 2)


def test_sparsity_pattern():
    assert fem.assemble_S(mesh.build_grid(1, DOMAIN, 12)).getnnz(axis=1).max() == 3
    assert fem.assemble_M(mesh.build_grid(2, DOMAIN, 6)).getnnz(axis=1).max() == 9


def test_potential_properties(rng):
    g = mesh.build_grid(2, DOMAIN, 5)
    M = fem.assemble_M(g)
    np.testing.assert_allclose(fem.assemble_V(g, np.full(g.n_nodes, 3.5)).toarray(),
                               3.5 * M.toarray(), atol=1e-13)
    v1, v2 = rng.normal(size=(2, g.n_nodes))
    np.testing.assert_allclose(fem.assemble_V(g, v1 + v2).toarray(),
                               (fem.assemble_V(g, v1) + fem.assemble_V(g, v2)).toarray(),
                               atol=1e-13)
    vpos = np.abs(v1)
    assert np.linalg.eigvalsh(fem.assemble_V(g, vpos).toarray())[0] > -1e-13
    with pytest.raises(ValueError):
        fem.assemble_V(g, np.ones(3))


def test_assemble_Q_cases(rng):
    g = mesh.build_grid(1, DOMAIN, 12)
    S, M = fem.assemble_S(g), fem.assemble_M(g)
    zero = fem.assemble_V(g, np.zeros(12))
    np.testing.assert_allclose(fem.assemble_Q(S, zero, math.sqrt(2)).toarray(), S.toarray(),
                               atol=1e-14)
    Q = fem.assemble_Q(S, fem.assemble_V(g, np.ones(12)), 1 / 16)
    sla.cholesky(Q.toarray())
    with pytest.raises(ValueError):
        fem.assemble_Q(S, zero, 1.0, shift=-1)
    with pytest.raises(ValueError):
        fem.assemble_Q(S, zero, 1.0, shift=1.0)


def test_shift_moves_generalised_spectrum(rng):
    g = mesh.build_grid(1, DOMAIN, 10)
    S, M = fem.assemble_S(g), fem.assemble_M(g)
    V = fem.assemble_V(g, rng.normal(size=10))
    base = sla.eigh(fem.assemble_Q(S, V, 0.3).toarray(), M.toarray(), eigvals_only=True)
    shifted = sla.eigh(fem.assemble_Q(S, V, 0.3, 2.5, M).toarray(), M.toarray(),
                       eigvals_only=True)
    np.testing.assert_allclose(shifted, base + 2.5, atol=1e-10)


def test_assemble_A():
    g = mesh.build_grid(1, DOMAIN, 8)
    same = mesh.CoarseFineMap(g, g)
    np.testing.assert_allclose(fem.assemble_A(same).toarray(), fem.assemble_M(g).toarray(),
                               atol=1e-15)
    cf = cfmap(8, 32)
    A = fem.assemble_A(cf)
    assert A.shape == (8, 32)
    np.testing.assert_allclose(A.sum(axis=1), cf.coarse.spacing[0], rtol=1e-12)
    assert np.linalg.matrix_rank(A.toarray()) == 8


def test_cyclic_bands():
    g = mesh.build_grid(1, DOMAIN, 6)
    d, o = fem.cyclic_bands(fem.assemble_S(g))
    h = g.spacing[0]
    np.testing.assert_allclose(d, 2 / h)
    np.testing.assert_allclose(o, -1 / h)
