"""Proper orthogonal decomposition of per-node snapshot fluctuations.

For snapshots ``phi_q`` with mean ``zeta0`` the fluctuations
``f_q = phi_q - zeta0`` are compressed with the method of snapshots: the
``Q x Q`` Gram matrix ``G = F W F^T / Q`` in the chosen inner product
(``W = M`` for L2, ``W = S + M`` for H1) is eigen-decomposed and the modes are
``zeta_l = F^T a_l / sqrt(Q lambda_l)``, orthonormal in ``W``.  Keeping ``m``
modes leaves the relative reconstruction error
``sum_{s>m} lambda_s / sum_s lambda_s``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

INNER_PRODUCTS = ("L2", "H1")


@dataclass(eq=False)
class ReducedBasisSet:
    """Mean function and POD modes of one coarse node, stored on its support."""

    node: int
    support: np.ndarray
    zeta0: np.ndarray
    modes: np.ndarray          # (m_k, n_support)
    eigenvalues: np.ndarray    # full positive spectrum, descending
    inner_product: str = "L2"

    @property
    def m_k(self):
        return self.modes.shape[0]

    @property
    def functions(self):
        """``[zeta0, zeta_1, ..., zeta_mk]`` stacked as rows."""
        return np.vstack([self.zeta0[None, :], self.modes])

    def truncated(self, m_k):
        if not 0 <= m_k <= self.m_k:
            raise ValueError(f"cannot keep {m_k} of {self.m_k} modes")
        return ReducedBasisSet(self.node, self.support, self.zeta0, self.modes[:m_k],
                               self.eigenvalues, self.inner_product)


def energy_ratio(eigenvalues, m_k):
    """Captured fraction ``sum_{s<=m_k} lambda_s / sum_s lambda_s``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 0 <= m_k <= lam.size:
        raise ValueError(f"m_k={m_k} outside [0, {lam.size}]")
    total = lam.sum()
    if total <= 0:
        return 1.0
    return float(lam[:m_k].sum() / total)


def weight_matrix(inner_product, S, M):
    if inner_product == "L2":
        return M
    if inner_product == "H1":
        return S + M
    raise ValueError(f"inner product must be one of {INNER_PRODUCTS}, got {inner_product!r}")


def _restrict(W, support):
    if sp.issparse(W):
        return W.tocsr()[support][:, support]
    return np.asarray(W)[np.ix_(support, support)]


def compute_pod(snapshots, W, m_k=None, rho=None, inner_product="L2", rtol=1e-12):
    """POD of a :class:`~msrb.msbasis.SnapshotSet`.

    ``W`` is the fine-grid weight matrix of the inner product (see
    :func:`weight_matrix`).  Give exactly one of ``m_k`` (fixed count) or
    ``rho`` (smallest count whose energy ratio reaches ``rho``).  Eigenvalues
    below ``rtol`` times the largest are treated as zero.
    """
    if (m_k is None) == (rho is None):
        raise ValueError("give exactly one of m_k or rho")
    values = np.asarray(snapshots.values, dtype=float)
    nq = values.shape[0]
    if nq < 2:
        raise ValueError("POD needs at least two snapshots")
    if rho is not None and not 0 < rho <= 1:
        raise ValueError(f"energy ratio must lie in (0, 1], got {rho}")
    if m_k is not None and not 1 <= m_k <= nq:
        raise ValueError(f"m_k must lie in [1, {nq}], got {m_k}")
    zeta0 = values.mean(axis=0)
    F = values - zeta0[None, :]
    Ws = _restrict(W, snapshots.support)
    WF = np.asarray(Ws @ F.T)                   # (n_support, Q)
    G = (F @ WF) / nq
    G = 0.5 * (G + G.T)
    lam, vec = sla.eigh(G)
    lam, vec = lam[::-1], vec[:, ::-1]
    keep = lam > rtol * max(lam[0], 0.0) if lam[0] > 0 else np.zeros(nq, bool)
    lam, vec = lam[keep], vec[:, keep]
    if rho is not None:
        cum = np.cumsum(lam) / lam.sum() if lam.size else np.ones(0)
        count = int(np.searchsorted(cum, rho - 1e-14) + 1) if lam.size else 0
    else:
        count = min(m_k, lam.size)
    modes = (F.T @ vec[:, :count]) / np.sqrt(nq * lam[:count])
    # one re-normalisation pass against rounding
    norms = np.sqrt(np.einsum("ij,ij->j", modes, np.asarray(Ws @ modes)))
    modes = (modes / norms).T if count else np.zeros((0, F.shape[1]))
    return ReducedBasisSet(snapshots.node, snapshots.support, zeta0, modes, lam, inner_product)


def reconstruction_error_ratio(snapshots, reduced, W):
    """``sum_q ||f_q - P f_q||_W^2 / sum_q ||f_q||_W^2`` for the W-orthogonal projector P."""
    Ws = _restrict(W, snapshots.support)
    F = np.asarray(snapshots.values) - reduced.zeta0[None, :]
    Z = reduced.modes.T
    coef = F @ np.asarray(Ws @ Z)
    R = F - coef @ Z.T
    num = np.einsum("qi,iq->", R, np.asarray(Ws @ R.T))
    den = np.einsum("qi,iq->", F, np.asarray(Ws @ F.T))
    return float(num / den)


def tail_ratio(eigenvalues, m_k):
    """``sum_{s>m_k} lambda_s / sum_s lambda_s``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if not 0 <= m_k <= lam.size:
        raise ValueError(f"m_k={m_k} outside [0, {lam.size}]")
    total = lam.sum()
    return float(lam[m_k:].sum() / total) if total > 0 else 0.0


def compute_all(snapshot_sets, S, M, m_k=None, rho=None, inner_product="L2"):
    """POD of every node's snapshots with a shared criterion."""
    W = weight_matrix(inner_product, S, M)
    return [compute_pod(s, W, m_k=m_k, rho=rho, inner_product=inner_product)
            for s in snapshot_sets]
