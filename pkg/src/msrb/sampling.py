"""Point sets in the unit cube and the map to the uniform KL variables."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

SQRT3 = math.sqrt(3.0)
METHODS = ("mc", "sobol", "shifted-lattice")


@dataclass(frozen=True, eq=False)
class SamplePlan:
    method: str
    n: int
    m: int
    seed: int = 0
    generating_vector: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    skip: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampling method {self.method!r}")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if self.method == "shifted-lattice":
            if self.generating_vector is None or len(self.generating_vector) != self.m:
                raise ValueError("shifted-lattice needs a generating vector of length m")


def generate(plan):
    """The ``n x m`` point set of ``plan``.

    * ``mc``: ``numpy`` PCG64 uniform draws from ``seed``.
    * ``sobol``: unscrambled Sobol points (Joe-Kuo direction numbers), starting
      at index ``plan.skip`` (1 by default, dropping the all-zero point).
    * ``shifted-lattice``: ``frac(i z / n + shift)`` for ``i = 1..n``; the shift is
      drawn from ``seed`` when not given.
    """
    if plan.method == "mc":
        return np.random.default_rng(plan.seed).random((plan.n, plan.m))
    if plan.method == "sobol":
        if plan.m > qmc.Sobol.MAXDIM:
            raise ValueError(f"Sobol direction numbers cover at most {qmc.Sobol.MAXDIM} dimensions")
        engine = qmc.Sobol(d=plan.m, scramble=False)
        if plan.skip:
            engine.fast_forward(plan.skip)
        with warnings.catch_warnings():
            # balance warnings for non powers of two are irrelevant here
            warnings.simplefilter("ignore", UserWarning)
            return engine.random(plan.n)
    z = np.asarray(plan.generating_vector, dtype=np.int64)
    shift = plan.shift
    if shift is None:
        shift = np.random.default_rng(plan.seed).random(plan.m)
    i = np.arange(1, plan.n + 1, dtype=np.int64)
    # integer product first keeps frac() exact for large n
    base = ((i[:, None] * z[None, :]) % plan.n) / plan.n
    return np.mod(base + np.asarray(shift, dtype=float)[None, :], 1.0)


def to_xi(points):
    """Map unit-cube points to ``[-sqrt3, sqrt3]``: ``xi = sqrt3 (2u - 1)``."""
    return SQRT3 * (2.0 * np.asarray(points, dtype=float) - 1.0)


def qmc_mean(values):
    """Arithmetic mean over the first axis with a fixed pairwise reduction order.

    The result depends only on the order of the inputs, never on chunking or
    threading, so ensemble means are reproducible bit for bit.
    """
    arr = np.asarray(values)
    if arr.shape[0] == 0:
        raise ValueError("cannot average an empty list")
    return _pairwise_sum(arr) / arr.shape[0]


def _pairwise_sum(arr):
    n = arr.shape[0]
    if n <= 8:
        acc = arr[0].copy() if hasattr(arr[0], "copy") else arr[0]
        for k in range(1, n):
            acc = acc + arr[k]
        return acc
    half = n // 2
    return _pairwise_sum(arr[:half]) + _pairwise_sum(arr[half:])


def read_generating_vector(path):
    """Read a lattice generating vector: one integer per line."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not an integer: {line!r}") from None
    return np.asarray(out, dtype=np.int64)


def l2_star_discrepancy(points):
    """Warnock's closed form of the L2 star discrepancy."""
    x = np.asarray(points, dtype=float)
    n, d = x.shape
    t1 = 3.0 ** (-d)
    t2 = np.prod((1.0 - x ** 2) / 2.0, axis=1).sum() * 2.0 / n
    mx = np.maximum(x[:, None, :], x[None, :, :])
    t3 = np.prod(1.0 - mx, axis=2).sum() / n ** 2
    return math.sqrt(max(t1 - t2 + t3, 0.0))
