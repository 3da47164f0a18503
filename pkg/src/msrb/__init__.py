"""Multiscale reduced basis solver for the semiclassical Schrödinger equation
with random potentials.

Offline: optimisation-based multiscale basis functions are computed for
sampled potentials (:mod:`msrb.msbasis`) and compressed per coarse node with
POD (:mod:`msrb.pod`).  Online: the reduced Galerkin system is integrated with
Crank-Nicolson for each quasi-Monte Carlo sample (:mod:`msrb.evolve`) and the
ensemble is post-processed (:mod:`msrb.observables`).
"""

from .kernels import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
