"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: an explicit-loop version (compiled with
``numba.njit`` when numba imports) and a vectorised numpy version.  The
public names dispatch to one of them at import time.  Set the environment
variable ``MSRB_NUMBA=0`` to force the numpy path, e.g. for debugging or on
platforms without numba.

Both paths must agree to rounding; ``tests/test_kernels.py`` checks this and
``benchmarks/bench_kernels.py`` times them against each other.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("MSRB_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")


def _jit(func):
    if numba is None:
        return func
    return numba.njit(cache=True)(func)


# ---------------------------------------------------------------------------
# Crank-Nicolson propagation for 1D periodic P1 systems
# ---------------------------------------------------------------------------
#
# L = M + i a A and R = M - i a A are cyclic tridiagonal and symmetric.  A
# matrix is passed as (diag, off) where off[i] couples nodes i and i+1 and
# off[N-1] couples N-1 and 0.  The cyclic system is reduced to a tridiagonal
# one by Sherman-Morrison with gamma = -diag[0].


def _cn_cyclic_loop(ld, lo, rd, ro, c, nsteps):
    nb, n = c.shape
    out = c.copy()
    b = np.empty(n, dtype=np.complex128)
    den = np.empty(n, dtype=np.complex128)
    cp = np.empty(n, dtype=np.complex128)
    z = np.empty(n, dtype=np.complex128)
    y = np.empty(n, dtype=np.complex128)
    r = np.empty(n, dtype=np.complex128)
    for s in range(nb):
        corner = lo[s, n - 1]
        gamma = -ld[s, 0]
        for i in range(n):
            b[i] = ld[s, i]
        b[0] -= gamma
        b[n - 1] -= corner * corner / gamma
        den[0] = b[0]
        cp[0] = lo[s, 0] / den[0]
        for i in range(1, n):
            den[i] = b[i] - lo[s, i - 1] * cp[i - 1]
            if i < n - 1:
                cp[i] = lo[s, i] / den[i]
        # z = T^{-1} u with u = (gamma, 0, ..., 0, corner)
        y[0] = gamma / den[0]
        for i in range(1, n):
            rhs = corner if i == n - 1 else 0.0j
            y[i] = (rhs - lo[s, i - 1] * y[i - 1]) / den[i]
        z[n - 1] = y[n - 1]
        for i in range(n - 2, -1, -1):
            z[i] = y[i] - cp[i] * z[i + 1]
        zden = 1.0 + z[0] + corner * z[n - 1] / gamma
        for _ in range(nsteps):
            x = out[s]
            r[0] = rd[s, 0] * x[0] + ro[s, 0] * x[1] + ro[s, n - 1] * x[n - 1]
            for i in range(1, n - 1):
                r[i] = rd[s, i] * x[i] + ro[s, i - 1] * x[i - 1] + ro[s, i] * x[i + 1]
            r[n - 1] = (rd[s, n - 1] * x[n - 1] + ro[s, n - 2] * x[n - 2]
                        + ro[s, n - 1] * x[0])
            y[0] = r[0] / den[0]
            for i in range(1, n):
                y[i] = (r[i] - lo[s, i - 1] * y[i - 1]) / den[i]
            x[n - 1] = y[n - 1]
            for i in range(n - 2, -1, -1):
                x[i] = y[i] - cp[i] * x[i + 1]
            fact = (x[0] + corner * x[n - 1] / gamma) / zden
            for i in range(n):
                x[i] -= fact * z[i]
    return out


def _cn_cyclic_numpy(ld, lo, rd, ro, c, nsteps):
    nb, n = c.shape
    out = np.array(c, dtype=np.complex128, copy=True)
    corner = lo[:, n - 1]
    gamma = -ld[:, 0]
    b = np.array(ld, dtype=np.complex128, copy=True)
    b[:, 0] -= gamma
    b[:, n - 1] -= corner * corner / gamma
    den = np.empty((nb, n), dtype=np.complex128)
    cp = np.zeros((nb, n), dtype=np.complex128)
    den[:, 0] = b[:, 0]
    cp[:, 0] = lo[:, 0] / den[:, 0]
    for i in range(1, n):
        den[:, i] = b[:, i] - lo[:, i - 1] * cp[:, i - 1]
        if i < n - 1:
            cp[:, i] = lo[:, i] / den[:, i]
    sub = lo[:, :-1]

    def tri_solve(rhs):
        y = np.empty_like(rhs)
        y[:, 0] = rhs[:, 0] / den[:, 0]
        for i in range(1, n):
            y[:, i] = (rhs[:, i] - sub[:, i - 1] * y[:, i - 1]) / den[:, i]
        for i in range(n - 2, -1, -1):
            y[:, i] -= cp[:, i] * y[:, i + 1]
        return y

    u = np.zeros((nb, n), dtype=np.complex128)
    u[:, 0] = gamma
    u[:, n - 1] = corner
    z = tri_solve(u)
    zden = 1.0 + z[:, 0] + corner * z[:, n - 1] / gamma
    for _ in range(nsteps):
        r = (rd * out + ro * np.roll(out, -1, axis=1)
             + np.roll(ro, 1, axis=1) * np.roll(out, 1, axis=1))
        x = tri_solve(r)
        fact = (x[:, 0] + corner * x[:, n - 1] / gamma) / zden
        out = x - fact[:, None] * z
    return out


# ---------------------------------------------------------------------------
# Element-level assembly helpers
# ---------------------------------------------------------------------------


def _potential_elements_loop(conn, v, tensor):
    ne, k = conn.shape
    out = np.zeros((ne, k, k))
    for e in range(ne):
        for c in range(k):
            vc = v[conn[e, c]]
            for a in range(k):
                for b in range(k):
                    out[e, a, b] += vc * tensor[a, b, c]
    return out


def _potential_elements_numpy(conn, v, tensor):
    return np.einsum("ec,abc->eab", v[conn], tensor)


def _element_energy_loop(conn, coeffs, ref):
    ne, k = conn.shape
    out = np.zeros(ne)
    for e in range(ne):
        acc = 0.0
        for a in range(k):
            ca = coeffs[conn[e, a]]
            for b in range(k):
                acc += ca * ref[a, b] * coeffs[conn[e, b]]
        out[e] = acc
    return out


def _element_energy_numpy(conn, coeffs, ref):
    ce = coeffs[conn]
    return np.einsum("ea,ab,eb->e", ce, ref, ce)


# ---------------------------------------------------------------------------
# Offline coverage statistic: min_q sup_x |v(xi_t) - v(xi_q)|
# ---------------------------------------------------------------------------


def _min_sup_distance_loop(test, train, modes):
    nt, m = test.shape
    nq = train.shape[0]
    nx = modes.shape[1]
    out = np.empty(nt)
    diff = np.empty(m)
    for t in range(nt):
        best = np.inf
        for q in range(nq):
            for j in range(m):
                diff[j] = test[t, j] - train[q, j]
            worst = 0.0
            for x in range(nx):
                acc = 0.0
                for j in range(m):
                    acc += diff[j] * modes[j, x]
                acc = abs(acc)
                if acc > worst:
                    worst = acc
                    if worst >= best:
                        break
            if worst < best:
                best = worst
        out[t] = best
    return out


def _min_sup_distance_numpy(test, train, modes):
    nt = test.shape[0]
    nq = train.shape[0]
    chunk = max(1, int(2_000_000 // max(1, nq * modes.shape[1])))
    out = np.empty(nt)
    for start in range(0, nt, chunk):
        diff = test[start:start + chunk, None, :] - train[None, :, :]
        sup = np.abs(diff @ modes).max(axis=2)
        out[start:start + chunk] = sup.min(axis=1)
    return out


numba_kernels = {
    "cn_cyclic_tridiag": _jit(_cn_cyclic_loop),
    "potential_elements": _jit(_potential_elements_loop),
    "element_energy": _jit(_element_energy_loop),
    "min_sup_distance": _jit(_min_sup_distance_loop),
}
numpy_kernels = {
    "cn_cyclic_tridiag": _cn_cyclic_numpy,
    "potential_elements": _potential_elements_numpy,
    "element_energy": _element_energy_numpy,
    "min_sup_distance": _min_sup_distance_numpy,
}

_active = numba_kernels if USE_NUMBA else numpy_kernels


def backend():
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numba" if USE_NUMBA else "numpy"


def cn_cyclic_tridiag(ld, lo, rd, ro, c, nsteps):
    """Apply ``nsteps`` Crank-Nicolson steps to a batch of 1D periodic states.

    Each row ``s`` solves ``L_s c_{k+1} = R_s c_k`` where ``L_s`` and ``R_s``
    are cyclic tridiagonal, given by diagonals ``ld``/``rd`` and
    off-diagonals ``lo``/``ro`` (``off[i]`` couples ``i`` and ``i+1 mod N``).
    All arrays are complex with shape ``(batch, N)``; ``N >= 3``.
    """
    args = [np.ascontiguousarray(a, dtype=np.complex128) for a in (ld, lo, rd, ro, c)]
    return _active["cn_cyclic_tridiag"](*args, int(nsteps))


def potential_elements(conn, v, tensor):
    """Element matrices ``V_e[a, b] = sum_c v[conn[e, c]] T[a, b, c]``."""
    return _active["potential_elements"](
        np.ascontiguousarray(conn), np.ascontiguousarray(v, dtype=float),
        np.ascontiguousarray(tensor, dtype=float))


def element_energy(conn, coeffs, ref):
    """Per-element quadratic form ``c_e^T ref c_e`` for a real nodal vector."""
    return _active["element_energy"](
        np.ascontiguousarray(conn), np.ascontiguousarray(coeffs, dtype=float),
        np.ascontiguousarray(ref, dtype=float))


def min_sup_distance(test, train, modes):
    """For each test row, ``min_q max_x |(test_t - train_q) @ modes|``."""
    return _active["min_sup_distance"](
        np.ascontiguousarray(test, dtype=float), np.ascontiguousarray(train, dtype=float),
        np.ascontiguousarray(modes, dtype=float))
