"""Uniform periodic tensor grids, coarse/fine nesting and nodal patches.

Nodes are numbered in C order over the per-axis indices (last axis fastest)
and periodic identification means the upper boundary carries no nodes.  Cell
``k`` along an axis spans nodes ``k`` and ``k + 1 (mod n)``.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on a box ``[a, b)^dim``."""

    dim: int
    lower: tuple
    upper: tuple
    n_cells: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        for name in ("lower", "upper", "n_cells"):
            if len(getattr(self, name)) != self.dim:
                raise ValueError(f"{name} must have length {self.dim}")
        for n in self.n_cells:
            if int(n) != n or n < 2:
                raise ValueError(f"cell count must be an integer >= 2, got {n}")
        for a, b in zip(self.lower, self.upper):
            if not b > a:
                raise ValueError(f"empty interval [{a}, {b})")

    @property
    def shape(self):
        return tuple(int(n) for n in self.n_cells)

    @property
    def length(self):
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    @property
    def spacing(self):
        return tuple(ell / n for ell, n in zip(self.length, self.n_cells))

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def n_elements(self):
        return self.n_nodes

    @property
    def volume(self):
        return float(np.prod(self.length))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axis_coordinates(self, axis):
        return self.lower[axis] + np.arange(self.shape[axis]) * self.spacing[axis]

    def coordinates(self):
        """Node coordinates, shape ``(n_nodes, dim)``."""
        axes = [self.axis_coordinates(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def elements(self):
        """Cell-to-node connectivity, shape ``(n_elements, 2**dim)``.

        Local node ``l`` of a cell has per-axis offsets given by the binary
        digits of ``l`` (first axis most significant), matching Kronecker
        products of 1D element matrices.
        """
        idx = np.indices(self.shape).reshape(self.dim, -1)
        cols = []
        for local in range(2 ** self.dim):
            offs = [(local >> (self.dim - 1 - k)) & 1 for k in range(self.dim)]
            shifted = [(idx[k] + offs[k]) % self.shape[k] for k in range(self.dim)]
            cols.append(np.ravel_multi_index(shifted, self.shape))
        return np.stack(cols, axis=1)

    def describe(self):
        return {"dim": self.dim, "lower": list(self.lower), "upper": list(self.upper),
                "n_cells": list(self.shape)}


def build_grid(dim, domain, n_cells):
    """Build a :class:`PeriodicGrid`.

    ``domain`` is one ``(a, b)`` pair (used on every axis) or one pair per
    axis; ``n_cells`` is an int or one int per axis.
    """
    dim = int(dim)
    if np.ndim(domain) == 1:
        domain = [tuple(domain)] * dim
    if np.ndim(n_cells) == 0:
        n_cells = [n_cells] * dim
    lower = tuple(float(a) for a, _ in domain)
    upper = tuple(float(b) for _, b in domain)
    return PeriodicGrid(dim, lower, upper, tuple(int(n) if n == int(n) else n for n in n_cells))


@dataclass(frozen=True)
class CoarseFineMap:
    coarse: PeriodicGrid
    fine: PeriodicGrid
    refinement: tuple = field(default=None)

    def __post_init__(self):
        c, f = self.coarse, self.fine
        if c.dim != f.dim or c.lower != f.lower or c.upper != f.upper:
            raise ValueError("coarse and fine grids must cover the same box")
        ratio = []
        for nc, nf in zip(c.shape, f.shape):
            if nf % nc:
                raise ValueError(f"fine cells {nf} not a multiple of coarse cells {nc}")
            ratio.append(nf // nc)
        if self.refinement is not None and tuple(self.refinement) != tuple(ratio):
            raise ValueError(f"refinement {self.refinement} inconsistent with grids ({ratio})")
        object.__setattr__(self, "refinement", tuple(ratio))

    @property
    def coarse_size(self):
        return tuple(h for h in self.coarse.spacing)

    def fine_index_of_coarse(self, coarse_node):
        """Fine node index sitting on a coarse node."""
        multi = np.unravel_index(coarse_node, self.coarse.shape)
        return int(np.ravel_multi_index([i * r for i, r in zip(multi, self.refinement)],
                                        self.fine.shape))


def nest(coarse, refinement):
    """Fine grid obtained by refining every coarse cell ``refinement`` times."""
    if np.ndim(refinement) == 0:
        refinement = [refinement] * coarse.dim
    fine = PeriodicGrid(coarse.dim, coarse.lower, coarse.upper,
                        tuple(n * int(r) for n, r in zip(coarse.shape, refinement)))
    return CoarseFineMap(coarse, fine)


def _hat_1d(n_coarse, r):
    """Weights of coarse hat centred at coarse node 0, on all fine nodes."""
    nf = n_coarse * r
    w = np.zeros(nf)
    k = np.arange(r + 1)
    vals = 1.0 - k / r
    w[k % nf] = np.maximum(w[k % nf], vals)
    w[(-k) % nf] = np.maximum(w[(-k) % nf], vals)
    return w


def _check_node(grid, node):
    if not 0 <= int(node) < grid.n_nodes:
        raise IndexError(f"coarse node {node} out of range [0, {grid.n_nodes})")


def nodal_basis_on_fine(cfmap, coarse_node):
    """Coarse nodal basis function sampled at every fine node."""
    _check_node(cfmap.coarse, coarse_node)
    multi = np.unravel_index(int(coarse_node), cfmap.coarse.shape)
    out = None
    for axis, (nc, r) in enumerate(zip(cfmap.coarse.shape, cfmap.refinement)):
        w = np.roll(_hat_1d(nc, r), multi[axis] * r)
        out = w if out is None else np.multiply.outer(out, w)
    return out.ravel()


def prolongation(cfmap):
    """Sparse ``N_h x N_H`` matrix whose columns are coarse hats on the fine grid."""
    mats = []
    for nc, r in zip(cfmap.coarse.shape, cfmap.refinement):
        base = _hat_1d(nc, r)
        nz = np.flatnonzero(base)
        rows = (nz[None, :] + r * np.arange(nc)[:, None]) % (nc * r)
        cols = np.repeat(np.arange(nc), nz.size)
        mats.append(sp.csr_matrix((np.tile(base[nz], nc), (rows.ravel(), cols)),
                                  shape=(nc * r, nc)))
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out.tocsr()


@dataclass(frozen=True)
class PatchFamily:
    """Nested nodal patches around one coarse node.

    ``cells[l]`` holds coarse cell indices of ``D_l``; ``layers[l]`` the fine
    nodes of its closure and ``interiors[l]`` the fine nodes strictly inside
    (the admissible support of a function vanishing outside ``D_l``).
    """

    center_node: int
    cells: list
    layers: list
    interiors: list


def _axis_ranges(center, ell, n_coarse, r):
    """Per-axis (coarse cells, closed fine nodes, interior fine nodes)."""
    nf = n_coarse * r
    if 2 * (ell + 1) >= n_coarse:
        allf = np.arange(nf)
        return np.arange(n_coarse), allf, allf
    cells = np.arange(center - ell - 1, center + ell + 1) % n_coarse
    lo = (center - ell - 1) * r
    hi = (center + ell + 1) * r
    closed = np.arange(lo, hi + 1) % nf
    interior = np.arange(lo + 1, hi) % nf
    return cells, closed, interior


def _product(shape, per_axis):
    grids = np.meshgrid(*per_axis, indexing="ij")
    return np.sort(np.ravel_multi_index([g.ravel() for g in grids], shape))


def patch_layers(cfmap, coarse_node, l_max):
    """Nodal patches ``D_0 ⊂ D_1 ⊂ ... ⊂ D_{l_max}`` around ``coarse_node``."""
    if l_max < 0:
        raise ValueError("l_max must be >= 0")
    _check_node(cfmap.coarse, coarse_node)
    multi = np.unravel_index(int(coarse_node), cfmap.coarse.shape)
    cells, layers, interiors = [], [], []
    for ell in range(int(l_max) + 1):
        ranges = [_axis_ranges(multi[k], ell, cfmap.coarse.shape[k], cfmap.refinement[k])
                  for k in range(cfmap.coarse.dim)]
        cells.append(_product(cfmap.coarse.shape, [r[0] for r in ranges]))
        layers.append(_product(cfmap.fine.shape, [r[1] for r in ranges]))
        interiors.append(_product(cfmap.fine.shape, [r[2] for r in ranges]))
    return PatchFamily(int(coarse_node), cells, layers, interiors)


def fine_element_cells(cfmap):
    """Coarse cell containing each fine element."""
    idx = np.indices(cfmap.fine.shape).reshape(cfmap.fine.dim, -1)
    coarse = [idx[k] // cfmap.refinement[k] for k in range(cfmap.fine.dim)]
    return np.ravel_multi_index(coarse, cfmap.coarse.shape)


def default_l_star(cfmap):
    """``ceil(log2(L / H))`` using the largest axis ratio."""
    ratio = max(ell / h for ell, h in zip(cfmap.coarse.length, cfmap.coarse.spacing))
    return max(1, int(math.ceil(math.log2(ratio) - 1e-12)))


def resolution_check(eps, H, V0, threshold=1.0):
    """Coarse-mesh resolution ratio ``sqrt(V0) H / eps`` and whether it is acceptable.

    Returns ``(ok, ratio)``.  Meant for warnings only; nothing aborts on it.
    """
    if np.ndim(H):
        H = max(H)
    ratio = math.sqrt(max(V0, 0.0)) * H / eps
    return ratio <= threshold, ratio


def grids_from_counts(dim, domain, coarse_cells, fine_cells):
    """Convenience: coarse grid plus the nested fine grid as a map."""
    coarse = build_grid(dim, domain, coarse_cells)
    fine = build_grid(dim, domain, fine_cells)
    return CoarseFineMap(coarse, fine)


def inject(values, source: PeriodicGrid, target: PeriodicGrid):
    """Sample nodal values on a coarser nested grid (shared nodes only)."""
    if source.shape == target.shape:
        return values
    steps = []
    for ns, nt in zip(source.shape, target.shape):
        if ns % nt:
            raise ValueError(f"grid with {nt} cells is not nested in one with {ns}")
        steps.append(ns // nt)
    arr = np.asarray(values).reshape(source.shape + np.shape(values)[1:])
    sl = tuple(slice(None, None, s) for s in steps)
    return arr[sl].reshape((target.n_nodes,) + np.shape(values)[1:])


__all__: Sequence[str] = [
    "PeriodicGrid", "CoarseFineMap", "PatchFamily", "build_grid", "nest",
    "nodal_basis_on_fine", "prolongation", "patch_layers", "fine_element_cells",
    "default_l_star", "resolution_check", "grids_from_counts", "inject",
]
