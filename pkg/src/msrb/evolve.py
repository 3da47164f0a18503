"""Galerkin systems and Crank-Nicolson time stepping.

The semi-discrete problem is ``i eps M c' = A(xi) c`` with
``A = (eps^2/2) S + V(xi)``.  One Crank-Nicolson step of size ``dt`` solves

    (M + i dt/(2 eps) A) c+ = (M - i dt/(2 eps) A) c,

which is the Cayley transform of a Hermitian pencil and therefore preserves
``c^H M c`` exactly.  Three interchangeable implementations exist:

``step``
    LU factorisations (dense or sparse), cached per sample and step size.
``spectral``
    For small dense reduced systems: diagonalise the pencil ``(A, M)`` once
    per sample and apply the CN amplification factor
    ``g = (1 - i dt lam / 2 eps) / (1 + i dt lam / 2 eps)`` mode by mode.
    This is the same discrete propagator as ``step``, only cheaper.
``tridiag``
    1D fine-grid systems: cyclic tridiagonal solves in a compiled kernel,
    batched over samples.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .fem import assemble_M, assemble_S, assemble_V, cyclic_bands, reference_element
from .mesh import PeriodicGrid
from .randfield import sample_many

METHODS = ("auto", "spectral", "step", "tridiag")
DENSE_LIMIT = 3000
# column ordering for sparse LU; the reduced matrices couple whole patches of
# nodes, where minimum degree on A^T A fills in far less than COLAMD
SPARSE_ORDERING = "MMD_ATA"


@dataclass
class WaveState:
    c: np.ndarray
    t: float = 0.0


def gaussian_initial(grid, center=0.0):
    """``(10/pi)^{d/4} exp(-20 |x - center|^2)`` at the grid nodes.

    Its squared L2 norm over ``R^d`` is ``(1/2)^d``.
    """
    x = grid.coordinates() - center
    return (10.0 / math.pi) ** (grid.dim / 4.0) * np.exp(-20.0 * np.sum(x ** 2, axis=1))


@dataclass(eq=False)
class GalerkinSystem:
    """Matrices of ``i eps M c' = ((eps^2/2) S + V(xi)) c`` in some basis.

    ``Z`` (``N_h x N``, sparse) maps coefficients to fine nodal values; it is
    ``None`` for the fine basis.  When the potential is affine in ``xi`` the
    reduced potential matrix is ``V0 + sum_j xi_j Vj`` with ``V0``/``Vj``
    projected once.
    """

    kind: str
    S: object
    M: object
    eps: float
    grid: PeriodicGrid
    fine_M: sp.csr_matrix
    Z: object = None
    potential: object = None
    V0: object = None
    V_modes: list = None
    node_offsets: np.ndarray = None
    _lu_cache: dict = field(default_factory=dict, repr=False)
    _chol: object = field(default=None, repr=False)

    @property
    def N(self):
        return self.M.shape[0]

    @property
    def is_dense(self):
        return not sp.issparse(self.M)

    def potential_values(self, sample):
        """Nodal potential values for a PotentialSample, a xi vector or raw values."""
        if hasattr(sample, "values"):
            return np.asarray(sample.values, dtype=float)
        arr = np.asarray(sample, dtype=float)
        if arr.shape == (self.grid.n_nodes,):
            return arr
        if self.potential is None:
            raise ValueError("a xi vector needs a system built with a potential")
        return sample_many(self.potential, arr)[0]

    def _xi(self, sample):
        xi = getattr(sample, "xi", None)
        if xi is None:
            arr = np.asarray(sample, dtype=float)
            if self.potential is not None and arr.shape == (self.potential.m,):
                xi = arr
        return xi

    def V(self, sample):
        """Potential matrix of ``sample`` in this basis."""
        xi = self._xi(sample)
        if self.V0 is not None and xi is not None:
            out = self.V0.copy()
            for x, Vj in zip(np.asarray(xi, dtype=float), self.V_modes):
                out = out + x * Vj
            return out
        Vf = assemble_V(self.grid, self.potential_values(sample))
        if self.Z is None:
            return Vf
        out = self.Z.T @ (Vf @ self.Z)
        return out.toarray() if self.is_dense else out.tocsr()

    def A(self, sample):
        return 0.5 * self.eps ** 2 * self.S + self.V(sample)

    def cache_key(self, sample, dt):
        xi = self._xi(sample)
        data = xi if xi is not None else self.potential_values(sample)
        return (np.asarray(data, dtype=float).tobytes(), float(dt))

    def cholesky(self):
        if self._chol is None:
            self._chol = sla.cholesky(self.M, lower=True)
        return self._chol


def _as_dense_or_sparse(mat, dense):
    if dense:
        return mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    return sp.csr_matrix(mat)


def build_fine_system(grid, eps, potential=None, S=None, M=None):
    """The fine-grid FEM system (identity basis)."""
    S = assemble_S(grid) if S is None else S
    M = assemble_M(grid) if M is None else M
    return GalerkinSystem("fine", S.tocsr(), M.tocsr(), float(eps), grid, M.tocsr(),
                          potential=potential)


def basis_matrix(reduced_sets, n_fine):
    """Sparse ``Z`` (``N_h x N``): per node ``zeta0`` then its modes."""
    rows, cols, vals = [], [], []
    offsets = [0]
    col = 0
    for rs in reduced_sets:
        funcs = rs.functions
        for f in funcs:
            nz = np.flatnonzero(f)
            rows.append(rs.support[nz])
            cols.append(np.full(nz.size, col))
            vals.append(f[nz])
            col += 1
        offsets.append(col)
    Z = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_fine, col))
    return Z, np.asarray(offsets)


def build_reduced_system(reduced_sets, S, M, eps, grid, potential=None, dense=None):
    """Reduced Galerkin system ``S_r = Z^T S Z``, ``M_r = Z^T M Z``.

    With ``potential`` given, the potential matrix is stored in affine form.
    Raises ``numpy.linalg.LinAlgError`` naming the nodes whose reduced
    functions are (numerically) linearly dependent.
    """
    Z, offsets = basis_matrix(reduced_sets, grid.n_nodes)
    N = Z.shape[1]
    dense = N <= DENSE_LIMIT if dense is None else dense
    S_r = _as_dense_or_sparse(Z.T @ S @ Z, dense)
    M_r = _as_dense_or_sparse(Z.T @ M @ Z, dense)
    if dense:
        S_r, M_r = 0.5 * (S_r + S_r.T), 0.5 * (M_r + M_r.T)
    _check_rank(M_r, offsets, [rs.node for rs in reduced_sets])
    V0 = V_modes = None
    if potential is not None:
        def project(values):
            P = Z.T @ (assemble_V(grid, values) @ Z)
            P = _as_dense_or_sparse(P, dense)
            return 0.5 * (P + P.T)
        V0 = project(potential.mean_field)
        V_modes = [project(mode) for mode in potential.modes]
    return GalerkinSystem("reduced", S_r, M_r, float(eps), grid, M.tocsr(), Z=Z.tocsr(),
                          potential=potential, V0=V0, V_modes=V_modes, node_offsets=offsets)


def _check_rank(M_r, offsets, nodes, rtol=1e-12):
    bad = []
    for k, node in enumerate(nodes):
        blk = M_r[offsets[k]:offsets[k + 1], offsets[k]:offsets[k + 1]]
        blk = blk.toarray() if sp.issparse(blk) else blk
        ev = np.linalg.eigvalsh(blk)
        if ev[0] <= rtol * ev[-1]:
            bad.append(node)
    if not bad and not sp.issparse(M_r):
        ev, vec = np.linalg.eigh(M_r)
        if ev[0] <= rtol * ev[-1]:
            weights = np.add.reduceat(vec[:, 0] ** 2, offsets[:-1])
            bad = [nodes[k] for k in np.flatnonzero(weights > 0.1 * weights.max())]
    if bad:
        raise np.linalg.LinAlgError(f"reduced mass matrix is rank deficient; nodes {bad}")


def project_initial(system, psi_in):
    """L2 projection of fine nodal values onto the basis: ``M_r c0 = Z^T M psi``."""
    psi = np.asarray(psi_in)
    if system.Z is None:
        return WaveState(psi.astype(complex), 0.0)
    rhs = system.Z.T @ (system.fine_M @ psi)
    if system.is_dense:
        c0 = sla.cho_solve((system.cholesky(), True), rhs)
    else:
        lu = spla.splu(system.M.tocsc(), permc_spec=SPARSE_ORDERING)
        rhs = np.asarray(rhs)
        c0 = lu.solve(rhs.real) + 1j * lu.solve(rhs.imag) if np.iscomplexobj(rhs) else lu.solve(rhs)
    return WaveState(np.asarray(c0, dtype=complex), 0.0)


def reconstruct(system, state):
    """Fine nodal values ``Z c``."""
    c = state.c if isinstance(state, WaveState) else np.asarray(state)
    return c if system.Z is None else system.Z @ c


def _factor(system, sample, dt):
    key = system.cache_key(sample, dt)
    hit = system._lu_cache.get(key)
    if hit is not None:
        return hit
    a = 1j * dt / (2.0 * system.eps)
    A = system.A(sample)
    L = system.M + a * A
    R = system.M - a * A
    if sp.issparse(L):
        lu = spla.splu(sp.csc_matrix(L), permc_spec=SPARSE_ORDERING)
        solve = lu.solve
    else:
        lu = sla.lu_factor(L, check_finite=False)
        solve = lambda b: sla.lu_solve(lu, b, check_finite=False)  # noqa: E731
    if len(system._lu_cache) >= 8:
        system._lu_cache.clear()
    system._lu_cache[key] = (solve, R)
    return solve, R


def step_crank_nicolson(system, sample, state, dt):
    """One Crank-Nicolson step of size ``dt`` (negative ``dt`` steps backwards)."""
    if dt == 0:
        raise ValueError("dt must be non-zero")
    solve, R = _factor(system, sample, dt)
    return WaveState(np.asarray(solve(R @ state.c)), state.t + dt)


def time_schedule(T, dt, times=None):
    """Step segments between output times.

    Returns ``(outputs, segments)`` where ``segments[k]`` is a list of
    ``(step, count)`` pairs taking the state from ``outputs[k-1]`` (or 0) to
    ``outputs[k]``.  The last step of every interval is shortened so each
    output time, and ``T`` itself, is hit exactly.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    outs = sorted({float(t) for t in (times if times is not None else ())} | {float(T)})
    if outs[0] < 0 or outs[-1] > T + 1e-12:
        raise ValueError("output times must lie in [0, T]")
    segments, t = [], 0.0
    for tau in outs:
        span = tau - t
        n = int(math.floor(span / dt + 1e-9))
        rest = span - n * dt
        seg = [(dt, n)] if n else []
        if rest > 1e-9 * dt:
            seg.append((rest, 1))
        segments.append(seg)
        t = tau
    return outs, segments


def default_dt(eps):
    return eps / 100.0


def _pick_method(system, method):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method != "auto":
        return method
    if system.kind == "reduced" and system.is_dense:
        return "spectral"
    if system.kind == "fine" and system.grid.dim == 1 and system.grid.n_nodes >= 3:
        return "tridiag"
    return "step"


def evolve(system, sample, psi_in, T, dt=None, times=None, method="auto"):
    """Trajectory ``[WaveState at each output time]`` (always ending at ``T``)."""
    dt = default_dt(system.eps) if dt is None else dt
    outs, segments = time_schedule(T, dt, times)
    return _trajectory(system, sample, project_initial(system, psi_in), outs, segments,
                       _pick_method(system, method))


def _trajectory(system, sample, state, outs, segments, method):
    if method == "spectral":
        return _evolve_spectral(system, sample, state, outs, segments)
    if method == "tridiag":
        coeffs = _evolve_tridiag_batch(system, [sample], state.c[None, :], segments)
        return [WaveState(coeffs[0, k], t) for k, t in enumerate(outs)]
    traj = []
    for tau, seg in zip(outs, segments):
        for step, count in seg:
            for _ in range(count):
                state = step_crank_nicolson(system, sample, state, step)
        state = WaveState(state.c, tau)
        traj.append(state)
    return traj


def cn_factor(lam, step, eps):
    """Crank-Nicolson amplification factor of an eigenvalue ``lam``."""
    z = 0.5j * step * np.asarray(lam) / eps
    return (1.0 - z) / (1.0 + z)


def _spectral_propagators(system, sample, outs, segments):
    L = system.cholesky()
    A = system.A(sample)
    B = sla.solve_triangular(L, sla.solve_triangular(L, A, lower=True).T, lower=True)
    lam, W = sla.eigh(0.5 * (B + B.T), driver="evd", check_finite=False)
    factors = []
    acc = np.ones(lam.size, dtype=complex)
    for seg in segments:
        for step, count in seg:
            acc = acc * cn_factor(lam, step, system.eps) ** count
        factors.append(acc.copy())
    return L, W, factors


def _evolve_spectral(system, sample, state, outs, segments):
    L, W, factors = _spectral_propagators(system, sample, outs, segments)
    y0 = W.T @ (L.T @ state.c)
    traj = []
    for tau, g in zip(outs, factors):
        c = sla.solve_triangular(L.T, W @ (g * y0), lower=False)
        traj.append(WaveState(c, tau))
    return traj


def _fine_bands(system, values):
    """Cyclic bands of ``M`` and ``A`` for a 1D fine system and nodal potential."""
    if not hasattr(system, "_bands"):
        system._bands = (cyclic_bands(system.M), cyclic_bands(system.S),
                         system.grid.elements(), reference_element(system.grid)[2])
    (md, mo), (sd, so), conn, triple = system._bands
    elem = kernels.potential_elements(conn, values, triple)
    vd = elem[:, 0, 0] + np.roll(elem[:, 1, 1], 1)
    vo = elem[:, 0, 1]
    h2 = 0.5 * system.eps ** 2
    return md, mo, h2 * sd + vd, h2 * so + vo


def _evolve_tridiag_batch(system, samples, c0, segments):
    """Fine 1D CN for a batch; returns ``(batch, n_outputs, N)`` coefficients."""
    nb, n = c0.shape
    bands = [_fine_bands(system, system.potential_values(s)) for s in samples]
    md, mo = bands[0][0], bands[0][1]
    Ad = np.stack([b[2] for b in bands])
    Ao = np.stack([b[3] for b in bands])
    out = np.empty((nb, len(segments), n), dtype=complex)
    c = np.asarray(c0, dtype=complex)
    for k, seg in enumerate(segments):
        for step, count in seg:
            a = 1j * step / (2.0 * system.eps)
            c = kernels.cn_cyclic_tridiag(md + a * Ad, mo + a * Ao,
                                          md - a * Ad, mo - a * Ao, c, count)
        out[:, k] = c
    return out


def solve_samples(system, xis, psi_in, T, dt=None, times=None, method="auto",
                  reduce=None, batch=64):
    """Evolve every parameter row of ``xis`` and return fine-grid results.

    Without ``reduce`` the result is an array ``(n, n_outputs, N_h)`` of
    reconstructed wavefunctions.  With ``reduce`` each sample's
    ``(n_outputs, N_h)`` block is passed through it and the list of results
    is returned, which keeps memory flat for long output series.
    """
    dt = default_dt(system.eps) if dt is None else dt
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    outs, segments = time_schedule(T, dt, times)
    method = _pick_method(system, method)
    state = project_initial(system, psi_in)
    results = []
    if method == "tridiag":
        for start in range(0, xis.shape[0], batch):
            block = xis[start:start + batch]
            c0 = np.repeat(state.c[None, :], block.shape[0], axis=0)
            coeffs = _evolve_tridiag_batch(system, list(block), c0, segments)
            for psi in coeffs:
                results.append(psi if reduce is None else reduce(psi))
    else:
        for xi in xis:
            traj = _trajectory(system, xi, state, outs, segments, method)
            system._lu_cache.clear()
            psi = np.stack([reconstruct(system, s) for s in traj])
            results.append(psi if reduce is None else reduce(psi))
    return np.asarray(results) if reduce is None else results


def l2_norm(system, psi):
    """``sqrt(psi^H M psi)`` with the fine mass matrix."""
    psi = np.asarray(psi)
    return float(np.sqrt(np.real(np.vdot(psi, system.fine_M @ psi))))


def sensitivity_check(system, xi, j, delta, psi_in, T, dt=None, method="auto"):
    """Central-difference ``||d psi(T) / d xi_j||_L2`` at ``xi``."""
    xi = np.asarray(xi, dtype=float)
    e = np.zeros_like(xi)
    e[j] = delta
    plus = reconstruct(system, evolve(system, xi + e, psi_in, T, dt, method=method)[-1])
    minus = reconstruct(system, evolve(system, xi - e, psi_in, T, dt, method=method)[-1])
    return l2_norm(system, (plus - minus) / (2.0 * delta))
