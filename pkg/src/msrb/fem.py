"""P1 (1D) / bilinear Q1 (2D) finite element matrices on periodic grids."""

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import prolongation


@lru_cache(maxsize=None)
def _reference_1d(h):
    """Element mass, stiffness and triple-product tensors on ``[0, h]``.

    Integrals are evaluated with 3-point Gauss-Legendre quadrature, exact up
    to degree 5 and therefore exact for the cubic triple products.
    """
    s, w = np.polynomial.legendre.leggauss(3)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    phi = np.stack([1.0 - s, s])           # (2, nq)
    dphi = np.array([-1.0, 1.0])
    mass = h * np.einsum("aq,bq,q->ab", phi, phi, w)
    stiff = np.outer(dphi, dphi) / h
    triple = h * np.einsum("aq,bq,cq,q->abc", phi, phi, phi, w)
    return mass, stiff, triple


def reference_element(grid):
    """``(mass, stiffness, triple)`` reference tensors for the grid's cells."""
    parts = [_reference_1d(h) for h in grid.spacing]
    if grid.dim == 1:
        return parts[0]
    (mx, sx, tx), (my, sy, ty) = parts
    mass = np.kron(mx, my)
    stiff = np.kron(sx, my) + np.kron(mx, sy)
    triple = np.einsum("ace,bdf->abcdef", tx, ty).reshape(4, 4, 4)
    return mass, stiff, triple


def _scatter(grid, elem_data):
    conn = grid.elements()
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    n = grid.n_nodes
    return sp.coo_matrix((np.asarray(elem_data).ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_S(grid):
    """Stiffness matrix ``S_ij = ∫ ∇φ_i · ∇φ_j``."""
    _, stiff, _ = reference_element(grid)
    return _scatter(grid, np.broadcast_to(stiff, (grid.n_elements,) + stiff.shape))


def assemble_M(grid):
    """Consistent mass matrix ``M_ij = ∫ φ_i φ_j``."""
    mass, _, _ = reference_element(grid)
    return _scatter(grid, np.broadcast_to(mass, (grid.n_elements,) + mass.shape))


def assemble_V(grid, sample):
    """Potential matrix ``V_ij = ∫ v φ_i φ_j`` for nodally interpolated ``v``.

    ``sample`` is a :class:`~msrb.randfield.PotentialSample` or a plain
    array of nodal values.
    """
    values = np.asarray(getattr(sample, "values", sample), dtype=float)
    if values.shape != (grid.n_nodes,):
        raise ValueError(f"potential has {values.shape} values, grid has {grid.n_nodes} nodes")
    _, _, triple = reference_element(grid)
    data = kernels.potential_elements(grid.elements(), values, triple)
    return _scatter(grid, data)


def assemble_Q(S, V, eps, shift=0.0, M=None):
    """QP Hessian ``(eps^2/2) S + V + shift * M``."""
    if shift < 0:
        raise ValueError("shift must be non-negative")
    Q = 0.5 * eps ** 2 * S + V
    if shift:
        if M is None:
            raise ValueError("a mass matrix is required for a non-zero shift")
        Q = Q + shift * M
    return Q.tocsr()


def assemble_A(cfmap, M=None):
    """Constraint matrix ``A_jk = (φ_k^h, φ_j^H)``, shape ``N_H x N_h``."""
    if M is None:
        M = assemble_M(cfmap.fine)
    return (prolongation(cfmap).T @ M).tocsr()


def cyclic_bands(mat):
    """Diagonal and periodic off-diagonal of a 1D cyclic tridiagonal matrix.

    ``off[i]`` is the ``(i, i+1 mod N)`` entry.
    """
    n = mat.shape[0]
    idx = np.arange(n)
    diag = np.asarray(mat[idx, idx]).ravel()
    off = np.asarray(mat[idx, (idx + 1) % n]).ravel()
    return diag, off
