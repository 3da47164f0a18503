"""Optimisation-based multiscale basis functions.

For a coarse node ``i`` the basis function minimises the discrete energy
``1/2 c^T Q c`` with ``Q = (eps^2/2) S + V`` subject to the nodal moment
constraints ``A c = e_i`` (``A_jk = (phi_k^h, phi_j^H)``).  The localized
variant restricts ``c`` to the fine nodes strictly inside the nodal patch
``D_{l*}`` and keeps only the constraints that see the patch.

The QP is solved through its symmetric indefinite KKT system with a
Bunch-Kaufman factorisation.  Its inertia tells whether ``Q`` is positive
definite on the constraint null space, i.e. whether the minimiser exists.
"""

import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from . import kernels
from .fem import assemble_A, assemble_M, assemble_Q, assemble_S, assemble_V, reference_element
from .mesh import default_l_star, fine_element_cells, patch_layers
from .randfield import bounds, sample_many
from .sampling import generate, to_xi

log = logging.getLogger(__name__)


class DefinitenessError(np.linalg.LinAlgError):
    """The QP Hessian is not positive definite on the constraint null space."""

    def __init__(self, message, smallest_pivot, sample_index=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot
        self.sample_index = sample_index


@dataclass(eq=False)
class MultiscaleBasis:
    node: int
    values: np.ndarray
    support: np.ndarray
    n_fine: int
    shift_used: float = 0.0

    @property
    def coeffs(self):
        out = np.zeros(self.n_fine)
        out[self.support] = self.values
        return out


def _block_eigs(ldu, ipiv):
    """Eigenvalues of the block-diagonal factor of a lower Bunch-Kaufman LDL^T."""
    n = ldu.shape[0]
    out = []
    k = 0
    while k < n:
        if ipiv[k] > 0:
            out.append(ldu[k, k])
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            mid, rad = 0.5 * (a + c), np.hypot(0.5 * (a - c), b)
            out.extend((mid + rad, mid - rad))
            k += 2
    return np.asarray(out)


@functools.lru_cache(maxsize=64)
def _sytrf_lwork(size):
    # the default workspace forces the unblocked algorithm
    return max(1, int(lapack.dsytrf_lwork(size, lower=1)[0]))


def kkt_solve(Qs, As, b):
    """Solve ``min 1/2 c^T Qs c  s.t.  As c = b`` with dense inputs.

    Returns ``(c, multipliers)``.  Raises :class:`DefinitenessError` when the
    KKT matrix is singular or its inertia differs from ``(n, k, 0)``.
    """
    n, k = Qs.shape[0], As.shape[0]
    scale = np.abs(As).max()
    K = np.zeros((n + k, n + k))
    K[:n, :n] = Qs
    K[n:, :n] = As / scale
    K[:n, n:] = K[n:, :n].T
    ldu, ipiv, info = lapack.dsytrf(K, lower=1, lwork=_sytrf_lwork(n + k), overwrite_a=1)
    eigs = _block_eigs(ldu, ipiv)
    mags = np.abs(eigs)
    tiny = 1e-13 * mags.max()
    smallest = float(mags.min())
    n_pos = int(np.sum(eigs > tiny))
    n_neg = int(np.sum(eigs < -tiny))
    if info > 0 or n_pos != n or n_neg != k:
        raise DefinitenessError(
            f"KKT inertia ({n_pos}, {n_neg}, {n + k - n_pos - n_neg}) != ({n}, {k}, 0)",
            smallest)
    rhs = np.zeros(n + k)
    rhs[n:] = np.asarray(b, dtype=float) / scale
    sol, info = lapack.dsytrs(ldu, ipiv, rhs, lower=1)
    if info:
        raise DefinitenessError("KKT back-substitution failed", smallest)
    return sol[:n], -sol[n:] / scale


def _dense_block(mat, rows, cols):
    if sp.issparse(mat):
        return mat[rows][:, cols].toarray()
    return np.asarray(mat)[np.ix_(rows, cols)]


@dataclass(eq=False)
class _LocalProblem:
    """Sample-independent restriction data for one coarse node."""

    node: int
    support: np.ndarray
    rows: np.ndarray
    As: np.ndarray
    b: np.ndarray


def _local_problem(A, node, support=None):
    A = A.tocsc() if sp.issparse(A) else A
    n_fine = A.shape[1]
    support = np.arange(n_fine) if support is None else np.asarray(support)
    block = A[:, support]
    block = block.toarray() if sp.issparse(block) else np.asarray(block)
    rows = np.flatnonzero(np.abs(block).max(axis=1) > 0)
    if node not in rows:
        raise ValueError(f"coarse node {node} does not touch the requested support")
    b = (rows == node).astype(float)
    return _LocalProblem(int(node), support, rows, block[rows], b)


def _solve_local(Q, local, n_fine, shift_used=0.0):
    Qs = _dense_block(Q, local.support, local.support)
    c, _ = kkt_solve(Qs, local.As, local.b)
    return MultiscaleBasis(local.node, c, local.support, n_fine, shift_used)


def solve_qp(Q, A, node, support=None):
    """Multiscale basis function of ``node`` (global, or localized to ``support``)."""
    return _solve_local(Q, _local_problem(A, node, support), A.shape[1])


def build_with_shift(S, V, M, A, eps, node, support=None, v_min=0.0):
    """Solve with shift 0, retrying with ``max(0, -v_min) + 1`` on definiteness failure.

    The shift only regularises the basis construction; it never enters the
    time evolution.
    """
    local = _local_problem(A, node, support)
    try:
        return _solve_local(assemble_Q(S, V, eps), local, A.shape[1])
    except DefinitenessError as exc:
        shift = max(0.0, -float(v_min)) + 1.0
        log.debug("node %d: %s; retrying with shift %.3g", node, exc, shift)
        return _solve_local(assemble_Q(S, V, eps, shift, M), local, A.shape[1], shift)


def localize(cfmap, node, l_star=None):
    """Fine nodes strictly inside the patch ``D_{l*}`` of ``node``."""
    if l_star is None:
        l_star = default_l_star(cfmap)
    if l_star < 1:
        raise ValueError("l_star must be >= 1")
    return patch_layers(cfmap, node, l_star).interiors[-1]


def decay_profile(basis, cfmap, l_max=None):
    """``(l, ||grad phi||_{D \\ D_l} / ||grad phi||_D)`` for ``l = 0..l_max``.

    Energies are accumulated element by element, so a fine element counts as
    inside ``D_l`` exactly when its coarse cell belongs to the patch.
    """
    if l_max is None:
        l_max = max(cfmap.coarse.shape) // 2
    _, stiff, _ = reference_element(cfmap.fine)
    energy = kernels.element_energy(cfmap.fine.elements(), basis.coeffs, stiff)
    total = energy.sum()
    owner = fine_element_cells(cfmap)
    fam = patch_layers(cfmap, basis.node, l_max)
    out = []
    for ell, cells in enumerate(fam.cells):
        inside = energy[np.isin(owner, cells)].sum()
        out.append((ell, float(np.sqrt(max(total - inside, 0.0) / total))))
    return out


@dataclass(eq=False)
class SnapshotSet:
    """Sampled localized basis functions of one coarse node (support-local)."""

    node: int
    support: np.ndarray
    xi: np.ndarray
    values: np.ndarray
    shifts: np.ndarray

    @property
    def mean(self):
        return self.values.mean(axis=0)

    @property
    def fluctuations(self):
        return self.values - self.mean[None, :]

    def basis(self, q, n_fine):
        return MultiscaleBasis(self.node, self.values[q], self.support, n_fine,
                               float(self.shifts[q]))


@dataclass(eq=False)
class FineOperators:
    """Sample-independent fine-grid matrices reused across many solves."""

    S: sp.csr_matrix
    M: sp.csr_matrix
    A: sp.csr_matrix

    @classmethod
    def build(cls, cfmap):
        M = assemble_M(cfmap.fine)
        return cls(assemble_S(cfmap.fine), M, assemble_A(cfmap, M))


def _plan_xi(plan, m):
    if hasattr(plan, "method"):
        if plan.m != m:
            raise ValueError(f"sample plan has dimension {plan.m}, potential has {m}")
        return to_xi(generate(plan))
    xi = np.atleast_2d(np.asarray(plan, dtype=float))
    if xi.shape[1] != m:
        raise ValueError(f"xi samples have dimension {xi.shape[1]}, potential has {m}")
    return xi


def generate_snapshots(potential, plan, eps, cfmap, l_star=None, ops=None, nodes=None):
    """Localized basis functions of every coarse node for each sampled potential.

    ``plan`` is a :class:`~msrb.sampling.SamplePlan` or an explicit ``(Q, m)``
    array of ``xi`` values.  A node whose QP is not convex for some sample is
    recomputed for all samples with the shift ``max(0, -v_min) + 1`` (``v_min``
    from :func:`msrb.randfield.bounds`) so its snapshots stay one smooth family.
    Returns a list of :class:`SnapshotSet`, indexed by coarse node.
    """
    xi = _plan_xi(plan, potential.m)
    nq = xi.shape[0]
    if nq < 2:
        raise ValueError("at least two offline samples are required")
    ops = ops or FineOperators.build(cfmap)
    l_star = default_l_star(cfmap) if l_star is None else l_star
    nodes = range(cfmap.coarse.n_nodes) if nodes is None else nodes
    locals_ = {k: _local_problem(ops.A, k, localize(cfmap, k, l_star)) for k in nodes}
    n_fine = cfmap.fine.n_nodes
    store = {k: np.empty((nq, p.support.size)) for k, p in locals_.items()}
    shifts = {k: np.zeros(nq) for k in locals_}
    failed = set()
    base = 0.5 * eps ** 2 * ops.S
    values = sample_many(potential, xi)
    for q in range(nq):
        Q = (base + assemble_V(cfmap.fine, values[q])).tocsr()
        for k, local in locals_.items():
            if k in failed:
                continue
            try:
                store[k][q] = _solve_local(Q, local, n_fine).values
            except DefinitenessError:
                failed.add(k)
    if failed:
        shift = max(0.0, -bounds(potential)[0]) + 1.0
        log.info("%d nodes need shift %.3g for convexity", len(failed), shift)
        for q in range(nq):
            Q = (base + assemble_V(cfmap.fine, values[q]) + shift * ops.M).tocsr()
            for k in failed:
                try:
                    store[k][q] = _solve_local(Q, locals_[k], n_fine).values
                except DefinitenessError as exc:
                    exc.sample_index = q
                    raise DefinitenessError(
                        f"node {k}, sample {q}: not convex even with shift {shift:.3g}",
                        exc.smallest_pivot, q) from exc
                shifts[k][q] = shift
    return [SnapshotSet(k, locals_[k].support, xi, store[k], shifts[k]) for k in locals_]


def coverage_statistic(potential, train_xi, test_xi):
    """Mean over test parameters of ``min_q ||v(xi) - v(xi_q)||_inf``.

    A plain Monte Carlo estimate of the offline sample-count criterion.
    """
    d = kernels.min_sup_distance(np.atleast_2d(test_xi), np.atleast_2d(train_xi), potential.modes)
    return float(d.mean())
