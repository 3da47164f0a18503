"""Sample statistics of wavefunctions: means, relative errors, second moments."""

from dataclasses import dataclass, field

import numpy as np

from .fem import assemble_M, assemble_S
from .mesh import inject
from .sampling import qmc_mean


@dataclass
class ErrorReport:
    error_l2: float
    error_h1: float
    n_samples: int = 0
    grid: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.error_l2 < 0 or self.error_h1 < 0:
            raise ValueError("errors must be non-negative")


def expected_wavefunction(samples, grid=None):
    """Deterministic-order mean of wavefunction samples (first axis)."""
    arr = np.asarray(samples)
    if grid is not None and arr.shape[-1] != grid.n_nodes:
        raise ValueError(f"samples have {arr.shape[-1]} values, grid has {grid.n_nodes} nodes")
    return qmc_mean(arr)


def _qform(mat, v):
    return float(np.real(np.vdot(v, mat @ v)))


def relative_errors(numerical, reference, grid, reference_grid=None, n_samples=0,
                    manifest=None, matrices=None):
    """Relative L2 and H1 errors of ``numerical`` against ``reference``.

    Both are nodal vectors on ``grid``; a reference given on a finer nested
    ``reference_grid`` is injected onto ``grid`` first.  Norms are the
    finite element forms ``M`` (L2) and ``S + M`` (H1).
    """
    ref = np.asarray(reference)
    if reference_grid is not None:
        ref = inject(ref, reference_grid, grid)
    num = np.asarray(numerical)
    if num.shape != (grid.n_nodes,) or ref.shape != (grid.n_nodes,):
        raise ValueError("numerical and reference must be nodal vectors on the grid")
    if matrices is None:
        S, M = assemble_S(grid), assemble_M(grid)
    else:
        S, M = matrices
    H = S + M
    d = num - ref
    nl2, nh1 = _qform(M, ref), _qform(H, ref)
    if nl2 <= 0:
        raise ValueError("reference has zero norm")
    return ErrorReport(float(np.sqrt(max(_qform(M, d), 0.0) / nl2)),
                       float(np.sqrt(max(_qform(H, d), 0.0) / nh1)),
                       int(n_samples), grid.describe(), dict(manifest or {}))


def centered_coordinates(grid):
    """Node coordinates mapped into the representative cell ``[-pi, pi)^d``."""
    x = grid.coordinates()
    return np.mod(x + np.pi, 2.0 * np.pi) - np.pi


def moment_weights(grid):
    """Row vector ``w`` with ``w . |psi|^2 ~ int |x|^2 |psi|^2``.

    The density is integrated with the lumped (nodal) rule ``h^d`` on the
    periodic grid.
    """
    x = centered_coordinates(grid)
    return np.sum(x ** 2, axis=1) * grid.cell_volume


def second_moment(samples, grid):
    """Sample mean of ``int |x|^2 |psi|^2 dx`` over ``(n, N_h)`` samples."""
    arr = np.atleast_2d(np.asarray(samples))
    w = moment_weights(grid)
    per = (np.abs(arr) ** 2) @ w
    return float(qmc_mean(per))


def moment_series(psi_times, grid):
    """``int |x|^2 |psi(t)|^2`` for each row of a ``(n_times, N_h)`` block."""
    return (np.abs(np.asarray(psi_times)) ** 2) @ moment_weights(grid)


def mass(psi, M):
    """``int |psi|^2`` through the mass matrix."""
    return _qform(M, np.asarray(psi))


def convergence_rate_fit(points):
    """Least-squares slope of ``log(error)`` against ``log(n or H)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("need at least three (x, error) pairs")
    if np.any(pts <= 0):
        raise ValueError("convergence data must be positive")
    slope, _ = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)
    return float(slope)


def linear_fit(x, y):
    """``(slope, intercept, r_squared)`` of an ordinary least-squares line."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def table_orders(errors):
    """``log2(e_{k-1} / e_k)`` for successive halvings (``nan`` for the first row)."""
    e = np.asarray(errors, dtype=float)
    out = np.full(e.size, np.nan)
    out[1:] = np.log2(e[:-1] / e[1:])
    return out
