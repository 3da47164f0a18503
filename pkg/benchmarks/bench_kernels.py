"""Time the numba and numpy implementations of every kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 1024]

Both paths are imported in one process (``msrb.kernels`` keeps both tables),
so the ``MSRB_NUMBA`` flag does not need to be toggled.  The first numba call
compiles; it is excluded from the timings.  Results are printed as a table
with the numba speed-up and the maximum absolute difference between paths.
"""

import argparse
import timeit

import numpy as np

from msrb import kernels
from msrb.fem import cyclic_bands, assemble_M, assemble_S, reference_element
from msrb.mesh import build_grid
from msrb.randfield import make_example


def cases(n, rng):
    grid = build_grid(1, (-np.pi, np.pi), n)
    (md, mo), (sd, so) = cyclic_bands(assemble_M(grid)), cyclic_bands(assemble_S(grid))
    a = 1j * 0.01 / (2 * (1 / 16))
    batch = 16
    ad = np.tile(sd / 512 + md, (batch, 1))
    ao = np.tile(so / 512 + mo, (batch, 1))
    mdb, mob = np.tile(md, (batch, 1)), np.tile(mo, (batch, 1))
    c = rng.normal(size=(batch, n)) + 0j
    conn = grid.elements()
    _, stiff, triple = reference_element(grid)
    v = rng.normal(size=n)
    grid2 = build_grid(2, (-np.pi, np.pi), int(np.sqrt(n)) * 2)
    conn2 = grid2.elements()
    triple2 = reference_element(grid2)[2]
    v2 = rng.normal(size=grid2.n_nodes)
    pot = make_example("sect5-multiscale", grid)
    train, test = rng.uniform(-1.7, 1.7, (200, 3)), rng.uniform(-1.7, 1.7, (50, 3))
    return {
        "cn_cyclic_tridiag (16 x 100 steps)":
            ("cn_cyclic_tridiag", (mdb + a * ad, mob + a * ao, mdb - a * ad, mob - a * ao, c, 100)),
        "potential_elements 1D": ("potential_elements", (conn, v, triple)),
        "potential_elements 2D": ("potential_elements", (conn2, v2, triple2)),
        "element_energy": ("element_energy", (conn, v, stiff)),
        "min_sup_distance (50 x 200)": ("min_sup_distance", (test, train, pot.modes)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--size", type=int, default=1024, help="fine cells of the 1D grid")
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':38s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s} {'max diff':>9s}")
    for label, (name, inputs) in cases(args.size, rng).items():
        fast, slow = kernels.numba_kernels[name], kernels.numpy_kernels[name]
        ref = fast(*inputs)  # compile
        diff = float(np.abs(ref - slow(*inputs)).max())
        t_fast = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat))
        t_slow = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat))
        print(f"{label:38s} {1e3 * t_fast:11.3f} {1e3 * t_slow:11.3f} "
              f"{t_slow / t_fast:9.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
