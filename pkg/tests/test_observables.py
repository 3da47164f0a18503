import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msrb import observables as obs
from msrb.evolve import gaussian_initial
from msrb.fem import assemble_M
from msrb.mesh import build_grid
from conftest import DOMAIN


@pytest.fixture(scope="module")
def g():
    return build_grid(1, DOMAIN, 128)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.9, 0.9).filter(lambda d: abs(d) > 1e-6), st.floats(0, 2 * math.pi))
def test_relative_error_of_scaled_reference(delta, phase):
    g = build_grid(1, DOMAIN, 64)
    x = g.coordinates()[:, 0]
    ref = np.exp(1j * phase) * (np.sin(x) + 0.3 * np.cos(3 * x) + 1j * np.exp(-x ** 2))
    rep = obs.relative_errors((1 + delta) * ref, ref, g)
    assert rep.error_l2 == pytest.approx(abs(delta), rel=1e-10)
    assert rep.error_h1 == pytest.approx(abs(delta), rel=1e-10)


def test_relative_error_quadrature_oracle():
    # ||sin x - sin 2x||^2 / ||sin x||^2 -> (pi + pi) / pi = 2 in L2 and
    # ((1+1) pi + (1+4) pi) / (2 pi) = 3.5 in H1 as h -> 0
    errs = []
    for n in (256, 512):
        g = build_grid(1, DOMAIN, n)
        x = g.coordinates()[:, 0]
        rep = obs.relative_errors(np.sin(2 * x), np.sin(x), g)
        errs.append((abs(rep.error_l2 - math.sqrt(2)), abs(rep.error_h1 - math.sqrt(3.5))))
    assert errs[1][0] < 1e-4 and errs[1][1] < 1e-3
    assert errs[0][0] / errs[1][0] == pytest.approx(4, rel=0.05)


def test_reference_on_finer_grid(g):
    fine = build_grid(1, DOMAIN, 512)
    xf = fine.coordinates()[:, 0]
    x = g.coordinates()[:, 0]
    rep = obs.relative_errors(np.cos(x), np.cos(xf), g, reference_grid=fine, n_samples=7,
                              manifest={"seed": 1})
    assert rep.error_l2 < 1e-14 and rep.n_samples == 7 and rep.manifest == {"seed": 1}
    assert rep.grid == g.describe()


def test_error_validation(g):
    z = np.zeros(g.n_nodes)
    with pytest.raises(ValueError):
        obs.relative_errors(z, z, g)
    with pytest.raises(ValueError):
        obs.relative_errors(z[:-1], z + 1, g)
    with pytest.raises(ValueError):
        obs.ErrorReport(-1.0, 0.0)


def test_expected_wavefunction(g):
    a = np.ones(g.n_nodes) * (1 + 1j)
    np.testing.assert_allclose(obs.expected_wavefunction([a, 3 * a], g), 2 * a)
    with pytest.raises(ValueError):
        obs.expected_wavefunction([a[:-1]], g)


def test_second_moment_of_initial_gaussian():
    vals = []
    for n in (256, 512):
        grid = build_grid(1, DOMAIN, n)
        vals.append(obs.second_moment(gaussian_initial(grid), grid))
    assert vals[1] == pytest.approx(1 / 160, rel=1e-8)


def test_centered_coordinates_wrap():
    grid = build_grid(1, (0.0, 2 * math.pi), 8)
    x = obs.centered_coordinates(grid)[:, 0]
    assert np.all(x >= -math.pi) and np.all(x < math.pi)
    np.testing.assert_allclose(np.sort(x), -math.pi + 2 * math.pi * np.arange(8) / 8, atol=1e-14)


def test_moment_series_and_mass(g):
    psi = gaussian_initial(g)
    series = obs.moment_series(np.stack([psi, 2 * psi]), g)
    assert series[1] == pytest.approx(4 * series[0])
    assert obs.second_moment(np.stack([psi, 2 * psi]), g) == pytest.approx(2.5 * series[0])
    M = assemble_M(g)
    assert obs.mass((1 + 1j) * psi, M) == pytest.approx(2 * psi @ (M @ psi), rel=1e-14)


def test_fits():
    n = np.array([10, 20, 40, 80])
    assert obs.convergence_rate_fit(np.c_[n, 3 * n ** -1.5]) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        obs.convergence_rate_fit([[1, 1], [2, 0.5]])
    with pytest.raises(ValueError):
        obs.convergence_rate_fit([[1, 1], [2, 0], [3, 1]])
    slope, icpt, r2 = obs.linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert (slope, icpt, r2) == pytest.approx((2, 1, 1))
    assert obs.linear_fit([0, 1, 2, 3], [0, 1, 0, 1])[2] < 0.5
    orders = obs.table_orders([1.0, 0.25, 0.0625])
    assert math.isnan(orders[0]) and orders[1:] == pytest.approx([2, 2])
