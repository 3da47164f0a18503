"""The numerical studies: convergence in space, POD, qMC, offline samples, localization.

Every study returns a :class:`Table` (column names, rows, extras).  Costly
intermediate products (fine operators, snapshot sets, reference ensembles)
are memoised on a :class:`Workbench`, so studies sharing a setup share work.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import observables as obs
from .evolve import build_fine_system, build_reduced_system, default_dt, gaussian_initial, solve_samples
from .mesh import build_grid, nest
from .msbasis import FineOperators, build_with_shift, decay_profile, generate_snapshots, localize, solve_qp
from .pod import compute_all
from .randfield import bounds, make_example, sample
from .fem import assemble_Q, assemble_V
from .sampling import SamplePlan, generate, qmc_mean, to_xi

log = logging.getLogger(__name__)
DOMAIN = (-math.pi, math.pi)


@dataclass
class Table:
    columns: list
    rows: list
    extras: dict = field(default_factory=dict)

    def column(self, name):
        k = self.columns.index(name)
        return [r[k] for r in self.rows]


def xi_points(method, n, m, seed=0):
    return to_xi(generate(SamplePlan(method, n, m, seed=seed)))


class Workbench:
    """Memo of grids, potentials, operators, offline products and ensembles."""

    def __init__(self, cache=None):
        self.memo = {}
        self.cache = cache

    def _get(self, key, make):
        if key not in self.memo:
            self.memo[key] = make()
        return self.memo[key]

    def cfmap(self, coarse_cells, fine_cells, dim=1):
        def make():
            coarse = build_grid(dim, DOMAIN, coarse_cells)
            if fine_cells % coarse_cells:
                raise ValueError(f"{coarse_cells} coarse cells do not nest in {fine_cells}")
            return nest(coarse, fine_cells // coarse_cells)
        return self._get(("cfmap", coarse_cells, fine_cells, dim), make)

    def grid(self, fine_cells, dim=1):
        return self._get(("grid", fine_cells, dim), lambda: build_grid(dim, DOMAIN, fine_cells))

    def potential(self, kind, fine_cells, dim=1, sigma=1.0, beta=0.0, m=None, E=None):
        key = ("pot", kind, fine_cells, dim, sigma, beta, m, None if E is None else tuple(E))
        return self._get(key, lambda: make_example(kind, self.grid(fine_cells, dim), sigma, beta, m, E))

    def ops(self, cfmap):
        return self._get(("ops", cfmap.coarse.shape, cfmap.fine.shape),
                         lambda: FineOperators.build(cfmap))

    def fine_system(self, potential, eps):
        g = potential.grid
        return self._get(("fine", id(potential), eps),
                         lambda: build_fine_system(g, eps, potential))

    def snapshots(self, potential, cfmap, eps, Q, sampling="sobol", seed=0, l_star=None):
        key = ("snap", id(potential), cfmap.coarse.shape, eps, Q, sampling, seed, l_star)

        def make():
            plan = SamplePlan(sampling, Q, potential.m, seed=seed)
            return generate_snapshots(potential, plan, eps, cfmap, l_star, ops=self.ops(cfmap))
        return self._get(key, make)

    def reduced_system(self, potential, cfmap, eps, Q, m_k=None, rho=None, sampling="sobol",
                       seed=0, l_star=None, inner_product="L2"):
        key = ("red", id(potential), cfmap.coarse.shape, eps, Q, m_k, rho, sampling, seed,
               l_star, inner_product)

        def make():
            snaps = self.snapshots(potential, cfmap, eps, Q, sampling, seed, l_star)
            ops = self.ops(cfmap)
            reduced = compute_all(snaps, ops.S, ops.M, m_k=m_k, rho=rho,
                                  inner_product=inner_product)
            return build_reduced_system(reduced, ops.S, ops.M, eps, cfmap.fine, potential)
        return self._get(key, make)

    def final_states(self, system, xi_key, xis, T, dt, method="auto"):
        """Final-time fine wavefunctions ``(n, N_h)`` of an ensemble (memoised)."""
        key = ("final", id(system), xi_key, T, dt, method)

        def make():
            psi = gaussian_initial(system.grid)
            return solve_samples(system, xis, psi, T, dt, method=method)[:, -1, :]
        return self._get(key, make)


def _errors(num, ref, grid, ops=None, n=0):
    mats = None if ops is None else (ops.S, ops.M)
    return obs.relative_errors(num, ref, grid, n_samples=n, matrices=mats)


def reference_mean(bench, potential, eps, T, dt, n_ref, sampling="sobol", seed=0):
    system = bench.fine_system(potential, eps)
    xis = xi_points(sampling, n_ref, potential.m, seed)
    states = bench.final_states(system, (sampling, n_ref, seed), xis, T, dt)
    return qmc_mean(states)


def _sect5(bench, fine_cells, sigma=1.0, E=None):
    return bench.potential("sect5-multiscale", fine_cells, sigma=sigma, E=E)


def converge_h(eps=1 / 16, fine_cells=1024, coarse_list=(32, 64, 128), Q=200, m_k=3, n=2560,
               n_ref=4000, T=1.0, dt=None, bench=None, sigma=1.0):
    """Relative errors of the expected wavefunction as the coarse mesh is refined."""
    bench = bench or Workbench()
    dt = default_dt(eps) if dt is None else dt
    pot = _sect5(bench, fine_cells, sigma)
    ref = reference_mean(bench, pot, eps, T, dt, n_ref)
    xis = xi_points("sobol", n, pot.m)
    rows = []
    for nc in coarse_list:
        cf = bench.cfmap(nc, fine_cells)
        system = bench.reduced_system(pot, cf, eps, Q, m_k=m_k)
        num = qmc_mean(bench.final_states(system, ("sobol", n, 0), xis, T, dt))
        rep = _errors(num, ref, cf.fine, bench.ops(cf), n)
        rows.append([2 * math.pi / nc, rep.error_l2, rep.error_h1])
    l2 = obs.table_orders([r[1] for r in rows])
    h1 = obs.table_orders([r[2] for r in rows])
    rows = [[r[0], r[1], a, r[2], b] for r, a, b in zip(rows, l2, h1)]
    return Table(["H", "error_l2", "order_l2", "error_h1", "order_h1"], rows)


def converge_pod(eps=1 / 16, fine_cells=1024, coarse_cells=128, m_k_list=(1, 2, 3, 4), Q=200,
                 n=2560, n_ref=4000, T=1.0, dt=None, bench=None):
    """Relative errors for increasing numbers of POD modes per node."""
    bench = bench or Workbench()
    dt = default_dt(eps) if dt is None else dt
    pot = _sect5(bench, fine_cells)
    ref = reference_mean(bench, pot, eps, T, dt, n_ref)
    xis = xi_points("sobol", n, pot.m)
    cf = bench.cfmap(coarse_cells, fine_cells)
    rows = []
    for mk in m_k_list:
        system = bench.reduced_system(pot, cf, eps, Q, m_k=mk)
        num = qmc_mean(bench.final_states(system, ("sobol", n, 0), xis, T, dt))
        rep = _errors(num, ref, cf.fine, bench.ops(cf), n)
        rows.append([mk, rep.error_l2, rep.error_h1])
    return Table(["m_k", "error_l2", "error_h1"], rows)


def offline_q(eps=1 / 16, fine_cells=1024, coarse_cells=128, Q_list=(10, 100, 200, 400), m_k=3,
              n=2560, n_ref=4000, T=1.0, dt=None, bench=None):
    """Relative errors as the number of offline potential samples grows."""
    bench = bench or Workbench()
    dt = default_dt(eps) if dt is None else dt
    pot = _sect5(bench, fine_cells)
    ref = reference_mean(bench, pot, eps, T, dt, n_ref)
    xis = xi_points("sobol", n, pot.m)
    cf = bench.cfmap(coarse_cells, fine_cells)
    rows = []
    for Q in Q_list:
        system = bench.reduced_system(pot, cf, eps, Q, m_k=min(m_k, Q))
        num = qmc_mean(bench.final_states(system, ("sobol", n, 0), xis, T, dt))
        rep = _errors(num, ref, cf.fine, bench.ops(cf), n)
        rows.append([Q, rep.error_l2, rep.error_h1])
    return Table(["Q", "error_l2", "error_h1"], rows)


def converge_qmc(eps=1 / 16, fine_cells=1024, coarse_cells=64, m_k=3, Q=200,
                 n_list=(160, 320, 640, 1280, 2560), n_ref=8000, mc_replicates=8, seed=0,
                 T=1.0, dt=None, bench=None):
    """qMC and MC sampling errors of the mean with a common spatial solver.

    The reference is the same reduced solver averaged over ``n_ref`` Sobol
    points, so only the sampling error is measured.  The MC error at each
    ``n`` is the root mean square over ``mc_replicates`` independent streams.
    """
    bench = bench or Workbench()
    dt = default_dt(eps) if dt is None else dt
    pot = _sect5(bench, fine_cells)
    cf = bench.cfmap(coarse_cells, fine_cells)
    ops = bench.ops(cf)
    system = bench.reduced_system(pot, cf, eps, Q, m_k=m_k)
    n_max = max(n_list)
    ref_states = bench.final_states(system, ("sobol", n_ref, 0),
                                    xi_points("sobol", n_ref, pot.m), T, dt)
    ref = qmc_mean(ref_states)
    qmc = [_errors(qmc_mean(ref_states[:n]), ref, cf.fine, ops, n).error_l2 for n in n_list]
    mc_sq = np.zeros(len(n_list))
    for r in range(mc_replicates):
        states = bench.final_states(system, ("mc", n_max, seed + r),
                                    xi_points("mc", n_max, pot.m, seed + r), T, dt)
        for k, n in enumerate(n_list):
            mc_sq[k] += _errors(qmc_mean(states[:n]), ref, cf.fine, ops, n).error_l2 ** 2
        bench.memo.pop(("final", id(system), ("mc", n_max, seed + r), T, dt, "auto"))
    mc = np.sqrt(mc_sq / mc_replicates)
    rows = [[n, a, b] for n, a, b in zip(n_list, qmc, mc)]
    extras = {"rate_qmc": obs.convergence_rate_fit(list(zip(n_list, qmc))),
              "rate_mc": obs.convergence_rate_fit(list(zip(n_list, mc)))}
    return Table(["n", "error_qmc", "error_mc"], rows, extras)


def prefix_means(states, ns):
    """Means over the first ``n`` rows for each increasing ``n`` in ``ns``.

    Blocks between consecutive prefix lengths are summed pairwise and then
    accumulated, so the cost is one pass over ``states``.
    """
    out, acc, prev = [], 0.0, 0
    for n in ns:
        if n < prev or n > len(states):
            raise ValueError("prefix lengths must be increasing and within the sample count")
        if n > prev:
            acc = acc + qmc_mean(states[prev:n]) * (n - prev)
        out.append(acc / n)
        prev = n
    return out


def required_samples(errors, candidates, target):
    """Smallest candidate after which every error stays at or below ``target``."""
    ok = np.asarray(errors) <= target
    for k in range(len(candidates)):
        if ok[k:].all():
            return candidates[k], k
    return None, None


def qmc_scaling(eps_list=(1 / 4, 1 / 8), m_list=(8,), target=4.5e-3, step=40, n_max=4000,
                n_ref=8000, cells_per_eps=64, beta=2.0, T=1.0, bench=None):
    """Sobol sample count needed to reach ``target`` relative L2 error.

    Reference and numerical solutions use the same fine-grid solver
    (``cells_per_eps / eps`` cells); the numerical mean over the first ``n``
    points is compared with the mean over ``n_ref`` points.
    """
    bench = bench or Workbench()
    rows = []
    for eps in eps_list:
        cells = int(round(cells_per_eps / eps))
        for m in m_list:
            pot = bench.potential("decay-1d", cells, sigma=1.0, beta=beta, m=m)
            system = bench.fine_system(pot, eps)
            dt = default_dt(eps)
            states = bench.final_states(system, ("sobol", n_ref, 0),
                                        xi_points("sobol", n_ref, m), T, dt)
            ref = qmc_mean(states)
            S, M = system.S, system.M
            cands = list(range(step, n_max + 1, step))
            errs = [obs.relative_errors(mean, ref, pot.grid, matrices=(S, M))
                    for mean in prefix_means(states, cands)]
            n_req, k = required_samples([e.error_l2 for e in errs], cands, target)
            el2 = errs[k].error_l2 if k is not None else float("nan")
            eh1 = errs[k].error_h1 if k is not None else float("nan")
            rows.append([eps, m, n_req, el2, eh1])
            bench.memo.pop(("final", id(system), ("sobol", n_ref, 0), T, dt, "auto"))
    return Table(["epsilon", "m", "n_required", "error_l2", "error_h1"], rows)


def anderson(dim=1, sigma=5.0, beta=0.0, m_list=(5, 10, 15), eps=1 / 8, fine_cells=600,
             coarse_cells=100, Q=200, m_k=3, n=256, T=4.0, n_times=41, dt=None,
             l_star=None, method="auto", include_control=True, bench=None):
    """Expected second moment ``A(t)`` with the reduced solver, one series per ``m``.

    The ``sigma = 0`` control is a single deterministic fine-grid run.
    """
    bench = bench or Workbench()
    dt = default_dt(eps) if dt is None else dt
    kind = "anderson-2d" if dim == 2 else "anderson-1d"
    times = np.linspace(0.0, T, n_times)
    cf = bench.cfmap(coarse_cells, fine_cells, dim)
    psi = gaussian_initial(cf.fine)
    series = {}
    for m in m_list:
        pot = bench.potential(kind, fine_cells, dim, sigma, beta, m)
        system = bench.reduced_system(pot, cf, eps, Q, m_k=m_k, l_star=l_star)
        xis = xi_points("sobol", n, m)
        moments = solve_samples(system, xis, psi, T, dt, times=times, method=method,
                                reduce=lambda p: obs.moment_series(p, cf.fine))
        series[f"m={m}"] = qmc_mean(np.asarray(moments))
    if include_control:
        pot0 = bench.potential(kind, fine_cells, dim, 0.0, beta, max(m_list))
        fine = bench.fine_system(pot0, eps)
        out = solve_samples(fine, np.zeros((1, pot0.m)), psi, T, dt, times=times)
        series["control"] = obs.moment_series(out[0], cf.fine)
    cols = ["t"] + list(series)
    rows = [[t] + [series[k][i] for k in series] for i, t in enumerate(times)]
    return Table(cols, rows, {"series": series, "times": times})


def plateau_change(times, values, fraction=0.25):
    """``(max - min) / min`` of a series over its final ``fraction`` of the window."""
    times = np.asarray(times)
    values = np.asarray(values)
    mask = times >= times[-1] - fraction * (times[-1] - times[0]) - 1e-12
    window = values[mask]
    return float((window.max() - window.min()) / window.min())


def decay_diagnostic(coarse_cells=256, fine_cells=1024, eps=1 / 16, realizations=4, l_max=None,
                     node=None, seed=0, bench=None):
    """Residual energy fractions of global multiscale basis functions vs patch layers."""
    bench = bench or Workbench()
    pot = _sect5(bench, fine_cells)
    cf = bench.cfmap(coarse_cells, fine_cells)
    ops = bench.ops(cf)
    node = coarse_cells // 2 if node is None else node
    l_max = l_max if l_max is not None else 8
    xis = xi_points("mc", realizations, pot.m, seed)
    v_min = bounds(pot)[0]
    rows, fits = [], []
    for r, xi in enumerate(xis):
        V = assemble_V(cf.fine, sample(pot, xi))
        basis = build_with_shift(ops.S, V, ops.M, ops.A, eps, node, v_min=v_min)
        prof = decay_profile(basis, cf, l_max)
        ells = [p[0] for p in prof if p[1] > 0]
        logs = [math.log(p[1]) for p in prof if p[1] > 0]
        slope, _, r2 = obs.linear_fit(ells, logs)
        fits.append((slope, r2))
        rows.extend([r, ell, frac] for ell, frac in prof)
    return Table(["realization", "layer", "fraction"], rows, {"fits": fits, "node": node})


def localization_error(coarse_cells, fine_cells, eps, l_star, xi, node=None, bench=None):
    """Energy-norm distance between global and ``l_star``-localized basis functions."""
    bench = bench or Workbench()
    pot = _sect5(bench, fine_cells)
    cf = bench.cfmap(coarse_cells, fine_cells)
    ops = bench.ops(cf)
    node = coarse_cells // 2 if node is None else node
    Q = assemble_Q(ops.S, assemble_V(cf.fine, sample(pot, xi)), eps)
    glob = solve_qp(Q, ops.A, node).coeffs
    loc = solve_qp(Q, ops.A, node, localize(cf, node, l_star)).coeffs
    d = glob - loc
    return float(np.sqrt(d @ (ops.S @ d) / (glob @ (ops.S @ glob))))
