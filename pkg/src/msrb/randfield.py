"""Parametrised random potentials ``v(x, xi) = mean(x) + sum_j xi_j a_j s_j(x)``.

The variables ``xi_j`` are i.i.d. uniform on ``[-sqrt(3), sqrt(3)]`` (zero
mean, unit variance).  Potentials live on the nodes of a fine grid.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .mesh import PeriodicGrid

SQRT3 = math.sqrt(3.0)

KINDS = ("sect5-multiscale", "decay-1d", "anderson-1d", "anderson-2d")


@dataclass(frozen=True, eq=False)
class KLPotential:
    """Truncated KL-type expansion on a grid.

    ``shapes`` has shape ``(m, n_nodes)`` and ``amplitudes`` shape ``(m,)``;
    the effective mode functions are ``amplitudes[:, None] * shapes``.
    """

    grid: PeriodicGrid
    mean_field: np.ndarray
    shapes: np.ndarray
    amplitudes: np.ndarray
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.shapes.ndim != 2 or self.shapes.shape[1] != self.grid.n_nodes:
            raise ValueError("shapes must be (m, n_nodes)")
        if self.amplitudes.shape != (self.shapes.shape[0],):
            raise ValueError("one amplitude per mode required")
        if self.mean_field.shape != (self.grid.n_nodes,):
            raise ValueError("mean field must be one value per node")
        if self.shapes.shape[0] < 1:
            raise ValueError("random dimension m must be >= 1")

    @property
    def m(self):
        return self.shapes.shape[0]

    @property
    def modes(self):
        return self.amplitudes[:, None] * self.shapes

    def truncated(self, m):
        """The same expansion keeping only the first ``m`` modes."""
        if not 1 <= m <= self.m:
            raise ValueError(f"cannot truncate {self.m} modes to {m}")
        spec = dict(self.spec, m=m)
        return KLPotential(self.grid, self.mean_field, self.shapes[:m], self.amplitudes[:m], spec)


@dataclass(frozen=True, eq=False)
class PotentialSample:
    values: np.ndarray
    xi: np.ndarray


def make_example(kind, grid, sigma=1.0, beta=0.0, m=None, E=None):
    """Analytic potentials used in the numerical studies.

    ``sect5-multiscale``
        ``1 + sigma * sum_j sin(j x^2) sin(x / E_j) xi_j`` with ``m = len(E)``.
    ``decay-1d``
        ``1 + sigma * sum_j j^-beta sin(j x) xi_j`` (``beta = 2``, ``sigma = 1``
        is the smooth decaying case).
    ``anderson-1d``
        ``sigma * sum_j j^-beta sin(j x) xi_j``.
    ``anderson-2d``
        ``sigma * sum_j j^-beta sin(j x1) sin(j x2) xi_j``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown potential kind {kind!r}; expected one of {KINDS}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = grid.coordinates()
    spec = {"kind": kind, "sigma": float(sigma), "beta": float(beta)}
    if kind == "sect5-multiscale":
        if grid.dim != 1:
            raise ValueError("sect5-multiscale is a 1D potential")
        if E is None:
            E = [1 / 9, 1 / 13, 1 / 11]
        E = np.asarray(E, dtype=float)
        if m is None:
            m = E.size
        if E.size != m:
            raise ValueError(f"E has {E.size} entries but m = {m}")
        j = np.arange(1, m + 1)
        xs = x[:, 0]
        shapes = np.sin(j[:, None] * xs[None, :] ** 2) * np.sin(xs[None, :] / E[:, None])
        amps = np.full(m, float(sigma))
        mean = np.ones(grid.n_nodes)
        spec["E"] = E.tolist()
    else:
        if m is None or m < 1:
            raise ValueError("m must be a positive integer")
        j = np.arange(1, m + 1)
        amps = sigma * j.astype(float) ** (-beta)
        if kind == "anderson-2d":
            if grid.dim != 2:
                raise ValueError("anderson-2d needs a 2D grid")
            shapes = np.sin(j[:, None] * x[None, :, 0]) * np.sin(j[:, None] * x[None, :, 1])
        else:
            if grid.dim != 1:
                raise ValueError(f"{kind} is a 1D potential")
            shapes = np.sin(j[:, None] * x[None, :, 0])
        mean = np.ones(grid.n_nodes) if kind == "decay-1d" else np.zeros(grid.n_nodes)
    spec["m"] = int(m)
    return KLPotential(grid, mean, shapes, amps, spec)


def sample(potential, xi):
    """Evaluate the potential at one parameter vector ``xi``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (potential.m,):
        raise ValueError(f"xi has shape {xi.shape}, expected ({potential.m},)")
    if np.any(np.abs(xi) > SQRT3 * (1 + 1e-12)):
        warnings.warn("xi outside [-sqrt(3), sqrt(3)]; evaluating anyway", stacklevel=2)
    values = potential.mean_field + (xi * potential.amplitudes) @ potential.shapes
    return PotentialSample(values, xi.copy())


def sample_many(potential, xis):
    """Nodal values for a batch of parameter vectors, shape ``(n, n_nodes)``."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    return potential.mean_field[None, :] + (xis * potential.amplitudes) @ potential.shapes


def bounds(potential):
    """Worst-case pointwise range of ``v`` over ``xi ∈ [-sqrt3, sqrt3]^m``."""
    spread = SQRT3 * (np.abs(potential.amplitudes)[:, None] * np.abs(potential.shapes)).sum(axis=0)
    return float((potential.mean_field - spread).min()), float((potential.mean_field + spread).max())


@dataclass(frozen=True)
class GaussianKernel:
    """``C(x, y) = sigma^2 exp(-sum_i d_i^2 / (2 l_i^2))`` with periodic distance."""

    sigma: float
    lengths: tuple

    def __call__(self, grid, x, y):
        d2 = np.zeros((x.shape[0], y.shape[0]))
        for k in range(grid.dim):
            d = np.abs(x[:, None, k] - y[None, :, k])
            d = np.minimum(d, grid.length[k] - d)
            d2 += d ** 2 / (2.0 * self.lengths[k] ** 2)
        return self.sigma ** 2 * np.exp(-d2)


@dataclass(frozen=True)
class ConstantKernel:
    """Rank-one kernel ``C(x, y) = sigma^2``."""

    sigma: float

    def __call__(self, grid, x, y):
        return np.full((x.shape[0], y.shape[0]), self.sigma ** 2)


def kl_from_kernel(kernel, grid, m, mean=None):
    """Discrete KL expansion of a covariance kernel on ``grid``.

    Nodal quadrature with equal weights ``w = cell_volume`` symmetrises the
    integral operator as ``w C``; eigenvectors are rescaled by ``w^{-1/2}`` so
    the returned shapes are orthonormal in the discrete L2 product.  Returns
    ``(potential, eigenvalues)`` with eigenvalues sorted descending.
    """
    x = grid.coordinates()
    C = kernel(grid, x, x)
    if not np.allclose(C, C.T, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise ValueError("covariance kernel is not symmetric")
    w = grid.cell_volume
    lam, vec = sla.eigh(w * C, driver="evd")
    lam, vec = lam[::-1], vec[:, ::-1]
    positive = int(np.sum(lam > 1e-12 * max(lam[0], 0.0)))
    if m > positive:
        warnings.warn(f"only {positive} positive eigenvalues; truncating m={m}", stacklevel=2)
        m = positive
    shapes = (vec[:, :m] / math.sqrt(w)).T
    # fix the sign of each mode for reproducibility
    signs = np.sign(shapes[np.arange(m), np.argmax(np.abs(shapes), axis=1)])
    shapes = shapes * signs[:, None]
    mean = np.zeros(grid.n_nodes) if mean is None else np.asarray(mean, dtype=float)
    spec = {"kind": "kernel", "kernel": type(kernel).__name__, "m": int(m),
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(kernel).items()}}
    pot = KLPotential(grid, mean, shapes, np.sqrt(lam[:m]), spec)
    return pot, lam
