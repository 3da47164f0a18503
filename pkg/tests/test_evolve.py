import math

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings, strategies as st

from msrb import evolve as ev
from msrb import randfield as rf
from msrb.fem import assemble_M, assemble_S
from msrb.mesh import build_grid
from msrb.msbasis import FineOperators, generate_snapshots
from msrb.pod import compute_all
from msrb.sampling import SamplePlan
from conftest import DOMAIN, cfmap

EPS = 1 / 8


@pytest.fixture(scope="module")
def fine():
    g = build_grid(1, DOMAIN, 64)
    pot = rf.make_example("sect5-multiscale", g)
    return ev.build_fine_system(g, EPS, pot)


@pytest.fixture(scope="module")
def reduced():
    cf = cfmap(8, 64)
    ops = FineOperators.build(cf)
    pot = rf.make_example("sect5-multiscale", cf.fine)
    snaps = generate_snapshots(pot, SamplePlan("sobol", 16, 3), EPS, cf, ops=ops)
    sets = compute_all(snaps, ops.S, ops.M, m_k=2)
    return ev.build_reduced_system(sets, ops.S, ops.M, EPS, cf.fine, pot)


XI = np.array([0.4, -1.2, 0.9])


def _mnorm(system, c):
    return math.sqrt(np.real(np.vdot(c, system.M @ c)))


def test_gaussian_initial_norm():
    g = build_grid(1, DOMAIN, 64)
    x = g.coordinates()[:, 0]
    f = lambda t: (10 / math.pi) ** 0.25 * math.exp(-20 * t * t)  # noqa: E731
    np.testing.assert_allclose(ev.gaussian_initial(g), [f(t) for t in x], rtol=1e-12)
    assert quad(lambda t: f(t) ** 2, -math.pi, math.pi)[0] == pytest.approx(0.5, rel=1e-12)
    # the P1 interpolant's mass-matrix norm converges at second order
    errs = []
    for n in (512, 1024):
        g = build_grid(1, DOMAIN, n)
        psi = ev.gaussian_initial(g)
        errs.append(abs(psi @ (assemble_M(g) @ psi) - 0.5))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.02)
    g2 = build_grid(2, DOMAIN, 256)
    psi2 = ev.gaussian_initial(g2)
    assert psi2 @ (assemble_M(g2) @ psi2) == pytest.approx(0.25, rel=5e-3)


@pytest.mark.parametrize("method", ["step", "tridiag"])
def test_fine_norm_conserved(fine, method):
    psi0 = ev.gaussian_initial(fine.grid)
    traj = ev.evolve(fine, XI, psi0, 0.5, dt=0.01, times=[0.1, 0.25], method=method)
    n0 = _mnorm(fine, psi0.astype(complex))
    assert [s.t for s in traj] == [0.1, 0.25, 0.5]
    for s in traj:
        assert _mnorm(fine, s.c) == pytest.approx(n0, rel=1e-12)


@pytest.mark.parametrize("method", ["step", "spectral"])
def test_reduced_norm_conserved(reduced, method):
    psi0 = ev.gaussian_initial(reduced.grid)
    state = ev.project_initial(reduced, psi0)
    traj = ev.evolve(reduced, XI, psi0, 0.5, dt=0.01, method=method)
    assert _mnorm(reduced, traj[-1].c) == pytest.approx(_mnorm(reduced, state.c), rel=1e-11)


def test_methods_agree(fine, reduced):
    psi0 = ev.gaussian_initial(fine.grid)
    a = ev.evolve(fine, XI, psi0, 0.3, dt=0.01, method="step")[-1].c
    b = ev.evolve(fine, XI, psi0, 0.3, dt=0.01, method="tridiag")[-1].c
    np.testing.assert_allclose(a, b, atol=1e-12)
    a = ev.evolve(reduced, XI, psi0, 0.3, dt=0.01, method="step")[-1].c
    b = ev.evolve(reduced, XI, psi0, 0.3, dt=0.01, method="spectral")[-1].c
    np.testing.assert_allclose(a, b, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.001, 0.05), st.integers(1, 5))
def test_reversibility(dt, n):
    g = build_grid(1, DOMAIN, 32)
    system = ev.build_fine_system(g, EPS, rf.make_example("sect5-multiscale", g))
    rng = np.random.default_rng(n)
    state = ev.WaveState(rng.normal(size=32) + 1j * rng.normal(size=32))
    cur = state
    for _ in range(n):
        cur = ev.step_crank_nicolson(system, XI, cur, dt)
    for _ in range(n):
        cur = ev.step_crank_nicolson(system, XI, cur, -dt)
    np.testing.assert_allclose(cur.c, state.c, atol=1e-11)
    assert cur.t == pytest.approx(0.0, abs=1e-15)


def test_plane_wave_oracle():
    """A discrete Fourier mode is an eigenvector of the periodic P1 pencil."""
    n, k, v0, dt, steps = 48, 3, 0.7, 0.02, 25
    g = build_grid(1, DOMAIN, n)
    h = g.spacing[0]
    system = ev.build_fine_system(g, EPS)
    x = g.coordinates()[:, 0]
    psi0 = np.exp(1j * k * x)
    theta = k * h
    lam = 0.5 * EPS ** 2 * (2 / h) * (1 - math.cos(theta)) / ((h / 3) * (2 + math.cos(theta))) + v0
    expect = ((1 - 0.5j * dt * lam / EPS) / (1 + 0.5j * dt * lam / EPS)) ** steps * psi0
    vals = np.full(g.n_nodes, v0)
    for method in ("step", "tridiag"):
        got = ev.evolve(system, vals, psi0, dt * steps, dt=dt, method=method)[-1].c
        np.testing.assert_allclose(got, expect, atol=1e-11)
    # and CN converges to the exact semi-discrete phase exp(-i lam t / eps)
    errs = []
    for d in (0.02, 0.01, 0.005):
        got = ev.evolve(system, vals, psi0, 0.5, dt=d, method="tridiag")[-1].c
        errs.append(np.abs(got - np.exp(-1j * lam * 0.5 / EPS) * psi0).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.05)


def test_time_schedule_hits_outputs():
    outs, segs = ev.time_schedule(1.0, 0.3, times=[0.5, 0.1])
    assert outs == [0.1, 0.5, 1.0]
    t = 0.0
    for tau, seg in zip(outs, segs):
        t += sum(step * cnt for step, cnt in seg)
        assert t == pytest.approx(tau, abs=1e-14)
    assert ev.time_schedule(0.0, 0.1) == ([0.0], [[]])
    with pytest.raises(ValueError):
        ev.time_schedule(1.0, 0.1, times=[2.0])
    with pytest.raises(ValueError):
        ev.time_schedule(1.0, 0.0)


def test_T_zero_returns_projection(reduced):
    psi0 = ev.gaussian_initial(reduced.grid)
    traj = ev.evolve(reduced, XI, psi0, 0.0)
    np.testing.assert_allclose(traj[-1].c, ev.project_initial(reduced, psi0).c, atol=1e-14)
    assert len(traj) == 1 and traj[0].t == 0.0


def test_projection_is_identity_on_span(reduced, rng):
    c = rng.normal(size=reduced.N) + 1j * rng.normal(size=reduced.N)
    psi = ev.reconstruct(reduced, c)
    np.testing.assert_allclose(ev.project_initial(reduced, psi).c, c, atol=1e-8)


def test_affine_potential_matches_assembly(reduced):
    vals = rf.sample(reduced.potential, XI).values
    np.testing.assert_allclose(reduced.V(XI), reduced.V(vals), atol=1e-12)


def test_reduced_vs_fine_close():
    # the coarse mesh must resolve both the initial Gaussian and eps
    cf = cfmap(32, 256)
    ops = FineOperators.build(cf)
    pot = rf.make_example("sect5-multiscale", cf.fine)
    snaps = generate_snapshots(pot, SamplePlan("sobol", 16, 3), EPS, cf, ops=ops)
    red = ev.build_reduced_system(compute_all(snaps, ops.S, ops.M, m_k=3), ops.S, ops.M, EPS,
                                  cf.fine, pot)
    fine = ev.build_fine_system(cf.fine, EPS, pot, ops.S, ops.M)
    psi0 = ev.gaussian_initial(cf.fine)
    f = ev.evolve(fine, XI, psi0, 0.5, dt=0.005)[-1].c
    r = ev.reconstruct(red, ev.evolve(red, XI, psi0, 0.5, dt=0.005)[-1])
    assert ev.l2_norm(fine, f - r) / ev.l2_norm(fine, f) < 0.02


def test_solve_samples_shapes_and_reduce(fine, reduced):
    psi0 = ev.gaussian_initial(fine.grid)
    xis = np.array([XI, -XI, 0 * XI])
    out = ev.solve_samples(fine, xis, psi0, 0.2, dt=0.01, times=[0.1], batch=2)
    assert out.shape == (3, 2, 64)
    single = ev.evolve(fine, xis[2], psi0, 0.2, dt=0.01, times=[0.1])
    np.testing.assert_allclose(out[2, 0], single[0].c, atol=1e-13)
    norms = ev.solve_samples(reduced, xis, psi0, 0.2, dt=0.01,
                             reduce=lambda p: ev.l2_norm(reduced, p[-1]))
    assert len(norms) == 3


def test_sensitivity_bound(fine):
    """||d psi(T)/d xi_j|| <= (T/eps) sup|d v/d xi_j| ||psi0|| (Duhamel)."""
    psi0 = ev.gaussian_initial(fine.grid)
    T = 0.5
    pot = fine.potential
    n0 = ev.l2_norm(fine, psi0)
    for j in range(3):
        d = ev.sensitivity_check(fine, XI, j, 1e-4, psi0, T, dt=0.01)
        bound = T / EPS * np.abs(pot.modes[j]).max() * n0
        assert 0 < d <= bound * 1.01


def test_errors(fine):
    with pytest.raises(ValueError):
        ev.evolve(fine, XI, ev.gaussian_initial(fine.grid), 0.1, method="rk4")
    with pytest.raises(ValueError):
        ev.step_crank_nicolson(fine, XI, ev.WaveState(np.zeros(64, complex)), 0.0)
    noscope = ev.build_fine_system(fine.grid, EPS)
    with pytest.raises(ValueError):
        noscope.V(XI)


def test_sparse_reduced_system_matches_dense(reduced):
    import scipy.sparse as sp

    sparse = ev.GalerkinSystem("reduced", sp.csr_matrix(reduced.S), sp.csr_matrix(reduced.M),
                               reduced.eps, reduced.grid, reduced.fine_M, Z=reduced.Z,
                               potential=reduced.potential)
    x = reduced.grid.coordinates()[:, 0]
    psi0 = ev.gaussian_initial(reduced.grid) * np.exp(2j * x)
    c_dense = ev.project_initial(reduced, psi0).c
    np.testing.assert_allclose(ev.project_initial(sparse, psi0).c, c_dense, atol=1e-10)
    a = ev.evolve(sparse, XI, psi0, 0.2, dt=0.01)[-1].c
    b = ev.evolve(reduced, XI, psi0, 0.2, dt=0.01, method="step")[-1].c
    np.testing.assert_allclose(a, b, atol=1e-10)
