import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msrb import mesh
from conftest import DOMAIN, cfmap


def test_build_grid_spacing_and_nodes():
    g = mesh.build_grid(1, DOMAIN, 4)
    assert g.spacing[0] == pytest.approx(math.pi / 2)
    assert g.n_nodes == 4
    np.testing.assert_allclose(g.coordinates()[:, 0], -math.pi + np.arange(4) * math.pi / 2)


def test_reference_and_2d_grid_sizes():
    assert mesh.build_grid(1, DOMAIN, 2048).n_nodes == 2048
    g = mesh.build_grid(2, DOMAIN, 400)
    assert g.n_nodes == 160000
    assert g.spacing[0] * g.n_cells[0] == pytest.approx(2 * math.pi, rel=1e-15)


@pytest.mark.parametrize("bad", [0, 1, -3, 2.5])
def test_build_grid_rejects_bad_cells(bad):
    with pytest.raises(ValueError):
        mesh.build_grid(1, DOMAIN, bad)


def test_nesting_validation():
    c = mesh.build_grid(1, DOMAIN, 8)
    f = mesh.build_grid(1, DOMAIN, 20)
    with pytest.raises(ValueError):
        mesh.CoarseFineMap(c, f)
    assert mesh.nest(c, 4).fine.n_cells == (32,)


def test_nodal_basis_refinement_two():
    cf = cfmap(8, 16)
    w = mesh.nodal_basis_on_fine(cf, 3)
    k = cf.fine_index_of_coarse(3)
    np.testing.assert_allclose(w[k - 2:k + 3], [0, 0.5, 1, 0.5, 0])
    assert w.sum() == pytest.approx(2.0)
    assert w[cf.fine_index_of_coarse(4)] == 0.0


def test_nodal_basis_2d_cell_centre():
    cf = cfmap(4, 8, dim=2)
    w = mesh.nodal_basis_on_fine(cf, 5).reshape(8, 8)
    # coarse node (1, 1) sits on fine node (2, 2); cell centre at (3, 3)
    assert w[2, 2] == 1.0
    assert w[3, 3] == pytest.approx(0.25)


def test_nodal_basis_index_error():
    with pytest.raises(IndexError):
        mesh.nodal_basis_on_fine(cfmap(8, 16), 8)


@pytest.mark.parametrize("dim,coarse,fine", [(1, 8, 32), (1, 5, 15), (2, 4, 12)])
def test_partition_of_unity(dim, coarse, fine):
    cf = cfmap(coarse, fine, dim)
    total = sum(mesh.nodal_basis_on_fine(cf, j) for j in range(cf.coarse.n_nodes))
    np.testing.assert_allclose(total, 1.0, atol=1e-12)
    P = mesh.prolongation(cf)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(P[:, 2].toarray().ravel(), mesh.nodal_basis_on_fine(cf, 2))


def test_patch_layers_counts():
    cf = cfmap(8, 32)
    fam = mesh.patch_layers(cf, 2, 5)
    assert len(fam.cells[0]) == 2
    assert len(fam.cells[1]) == 4
    assert len(fam.cells[3]) == 8
    assert len(fam.layers[5]) == cf.fine.n_nodes
    np.testing.assert_array_equal(fam.layers[4], fam.layers[5])
    # closed D_0 spans two coarse cells: 2 r + 1 fine nodes, interior 2 r - 1
    assert len(fam.layers[0]) == 9 and len(fam.interiors[0]) == 7


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 8))
def test_patch_monotone_and_saturating(nc, r, ell_max):
    cf = cfmap(nc, nc * r)
    node = nc // 2
    fam = mesh.patch_layers(cf, node, ell_max)
    sizes = [len(x) for x in fam.layers]
    assert sizes == sorted(sizes)
    assert sizes[-1] <= cf.fine.n_nodes
    for a, b in zip(fam.layers, fam.layers[1:]):
        assert set(a) <= set(b)
    big = mesh.patch_layers(cf, node, nc)
    assert len(big.layers[-1]) == cf.fine.n_nodes


def test_resolution_check():
    ok, ratio = mesh.resolution_check(1 / 16, 2 * math.pi / 256, 1.0)
    assert ok and ratio == pytest.approx(0.3927, abs=1e-4)
    ok, ratio = mesh.resolution_check(1 / 16, 2 * math.pi / 32, 1.0)
    assert not ok and ratio == pytest.approx(3.1416, abs=1e-4)
    assert mesh.resolution_check(0.1, 1.0, 0.0) == (True, 0.0)


def test_default_l_star():
    assert mesh.default_l_star(cfmap(128, 256)) == 7
    assert mesh.default_l_star(cfmap(64, 128)) == 6


def test_inject_takes_shared_nodes():
    fine = mesh.build_grid(1, DOMAIN, 16)
    coarse = mesh.build_grid(1, DOMAIN, 4)
    v = np.arange(16.0)
    np.testing.assert_array_equal(mesh.inject(v, fine, coarse), [0, 4, 8, 12])
