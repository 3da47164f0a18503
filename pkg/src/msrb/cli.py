"""Command-line driver: ``msrb run|basis-build|pod|solve CONFIG [overrides]``."""

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import time

import numpy as np

from . import experiments as ex
from . import observables as obs
from .cache import CacheMismatchError, StageCache, config_hash
from .config import FLAG_FIELDS, ConfigError, load_config
from .evolve import build_reduced_system, default_dt, gaussian_initial, solve_samples
from .kernels import backend
from .msbasis import DefinitenessError, generate_snapshots
from .pod import compute_all
from .sampling import SamplePlan, qmc_mean

log = logging.getLogger("msrb")


def timestamp():
    """UTC timestamp; ``SOURCE_DATE_EPOCH`` pins it for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc))
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def manifest(cfg, stage):
    return {"experiment": cfg["experiment"]["name"], "stage": stage, "params": cfg,
            "seeds": {"offline": cfg["offline"]["seed"], "online": cfg["online"]["seed"]},
            "backend": backend(), "timestamp": timestamp(), "config_hash": config_hash(cfg)}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns, rows, meta):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# manifest " + json.dumps(meta, sort_keys=True, default=str) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


# ---------------------------------------------------------------------------
# run: full experiments
# ---------------------------------------------------------------------------


def _first(cfg, sec, key):
    return cfg[sec][key][0]


def run_experiment(cfg, bench=None):
    """Dispatch on ``experiment.name``; returns ``{file stem: Table}``."""
    bench = bench or ex.Workbench()
    name = cfg["experiment"]["name"]
    eps = _first(cfg, "physics", "epsilon")
    fine = _first(cfg, "grid", "fine_cells")
    T, dt = cfg["physics"]["T"], cfg["physics"]["dt"]
    off, on = cfg["offline"], cfg["online"]
    if name == "converge-h":
        return {"table_h": ex.converge_h(eps, fine, cfg["grid"]["coarse_cells"], off["Q"][0],
                                         off["m_k"][0], on["samples"][0], on["n_ref"], T, dt,
                                         bench, cfg["potential"]["sigma"])}
    if name == "converge-pod":
        return {"table_pod": ex.converge_pod(eps, fine, cfg["grid"]["coarse_cells"][0],
                                             off["m_k"], off["Q"][0], on["samples"][0],
                                             on["n_ref"], T, dt, bench)}
    if name == "offline-q":
        return {"table_offline_q": ex.offline_q(eps, fine, cfg["grid"]["coarse_cells"][0],
                                                off["Q"], off["m_k"][0], on["samples"][0],
                                                on["n_ref"], T, dt, bench)}
    if name == "converge-qmc":
        tab = ex.converge_qmc(eps, fine, cfg["grid"]["coarse_cells"][0], off["m_k"][0],
                              off["Q"][0], on["samples"], on["n_ref"], on["mc_replicates"],
                              on["seed"], T, dt, bench)
        return {"series_qmc": tab}
    if name in ("qmc-eps-scaling", "qmc-dim-scaling"):
        tab = ex.qmc_scaling(cfg["physics"]["epsilon"], cfg["potential"]["m"], on["target"],
                             on["step"], max(on["samples"]), on["n_ref"],
                             on["ref_cells_per_eps"], cfg["potential"]["beta"], T, bench)
        return {name.replace("-", "_"): tab}
    if name in ("anderson-1d", "anderson-2d"):
        n_times = cfg["physics"]["n_times"] or 41
        tab = ex.anderson(cfg["grid"]["dim"], cfg["potential"]["sigma"], cfg["potential"]["beta"],
                          cfg["potential"]["m"], eps, fine, cfg["grid"]["coarse_cells"][0],
                          off["Q"][0], off["m_k"][0], on["samples"][0], T, n_times, dt,
                          cfg["grid"]["l_star"], on["method"], True, bench)
        return {"series_" + name.replace("-", "_"): tab}
    if name == "decay-diagnostic":
        tab = ex.decay_diagnostic(cfg["grid"]["coarse_cells"][0], fine, eps,
                                  cfg["decay"]["realizations"], cfg["decay"]["l_max"],
                                  seed=off["seed"], bench=bench)
        fits = ex.Table(["realization", "slope", "r_squared"],
                        [[k, s, r] for k, (s, r) in enumerate(tab.extras["fits"])])
        return {"series_decay": tab, "table_decay_fits": fits}
    raise ConfigError(f"experiment.name: unsupported {name!r}")


# ---------------------------------------------------------------------------
# stage-wise subcommands sharing a snapshot cache
# ---------------------------------------------------------------------------


def _setup(cfg, bench):
    pot = bench.potential(cfg["potential"]["kind"], _first(cfg, "grid", "fine_cells"),
                          cfg["grid"]["dim"], cfg["potential"]["sigma"],
                          cfg["potential"]["beta"], _first(cfg, "potential", "m"),
                          cfg["potential"]["E"])
    cf = bench.cfmap(_first(cfg, "grid", "coarse_cells"), _first(cfg, "grid", "fine_cells"),
                     cfg["grid"]["dim"])
    return pot, cf


def snapshot_key(cfg):
    sub = {"potential": cfg["potential"], "grid": cfg["grid"],
           "epsilon": _first(cfg, "physics", "epsilon"),
           "offline": {k: cfg["offline"][k] for k in ("Q", "sampling", "seed")}}
    sub["potential"] = dict(sub["potential"], m=_first(cfg, "potential", "m"))
    sub["grid"] = dict(sub["grid"], fine_cells=_first(cfg, "grid", "fine_cells"),
                       coarse_cells=_first(cfg, "grid", "coarse_cells"))
    sub["offline"]["Q"] = sub["offline"]["Q"][0]
    return config_hash(sub)


def reduced_key(cfg):
    return config_hash({"snapshots": snapshot_key(cfg), "m_k": _first(cfg, "offline", "m_k"),
                        "rho": cfg["offline"]["rho"],
                        "inner_product": cfg["offline"]["inner_product"]})


def _cache(cfg):
    return StageCache(cfg["experiment"]["cache"] or os.path.join(cfg["experiment"]["out"], "cache"))


def stage_basis_build(cfg, bench, out=None):
    out = out or sys.stdout
    cache, key = _cache(cfg), snapshot_key(cfg)
    if cache.check("snapshots", key):
        print(f"snapshots: cache hit ({cache.path('snapshots')})", file=out)
        return cache.load_snapshots(key), True
    pot, cf = _setup(cfg, bench)
    plan = SamplePlan(cfg["offline"]["sampling"], cfg["offline"]["Q"][0], pot.m,
                      seed=cfg["offline"]["seed"])
    t0 = time.perf_counter()
    snaps = generate_snapshots(pot, plan, _first(cfg, "physics", "epsilon"), cf,
                               cfg["grid"]["l_star"], ops=bench.ops(cf))
    cache.save_snapshots(key, snaps)
    shifted = sum(int(s.shifts.any()) for s in snaps)
    print(f"snapshots: built {len(snaps)} nodes x {plan.n} samples in "
          f"{time.perf_counter() - t0:.1f}s ({shifted} nodes shifted)", file=out)
    return snaps, False


def stage_pod(cfg, bench, out=None):
    out = out or sys.stdout
    cache = _cache(cfg)
    snaps = cache.load_snapshots(snapshot_key(cfg))
    if snaps is None:
        raise CacheMismatchError(f"no snapshots in {cache.root}; run basis-build first")
    _, cf = _setup(cfg, bench)
    ops = bench.ops(cf)
    rho = cfg["offline"]["rho"]
    m_k = None if rho is not None else _first(cfg, "offline", "m_k")
    reduced = compute_all(snaps, ops.S, ops.M, m_k=m_k, rho=rho,
                          inner_product=cfg["offline"]["inner_product"])
    cache.save_reduced(reduced_key(cfg), reduced)
    counts = [r.m_k for r in reduced]
    print(f"pod: m_k per node min {min(counts)} max {max(counts)} "
          f"(total dimension {sum(c + 1 for c in counts)})", file=out)
    print("node,m_k", file=out)
    for r in reduced:
        print(f"{r.node},{r.m_k}", file=out)
    return reduced


def stage_solve(cfg, bench, out=None):
    out = out or sys.stdout
    cache = _cache(cfg)
    reduced = cache.load_reduced(reduced_key(cfg))
    if reduced is None:
        raise CacheMismatchError(f"no reduced basis in {cache.root}; run pod first")
    pot, cf = _setup(cfg, bench)
    ops = bench.ops(cf)
    eps = _first(cfg, "physics", "epsilon")
    system = build_reduced_system(reduced, ops.S, ops.M, eps, cf.fine, pot)
    n = cfg["online"]["samples"][0]
    xis = ex.xi_points(cfg["online"]["sampling"], n, pot.m, cfg["online"]["seed"])
    T = cfg["physics"]["T"]
    dt = cfg["physics"]["dt"] or default_dt(eps)
    psi_in = gaussian_initial(cf.fine)
    states = solve_samples(system, xis, psi_in, T, dt, method=cfg["online"]["method"])[:, -1]
    mean = qmc_mean(states)
    a_t = obs.second_moment(states, cf.fine)
    x = cf.fine.coordinates()
    rows = [list(xx) + [v.real, v.imag] for xx, v in zip(x, mean)]
    cols = [f"x{k + 1}" for k in range(cf.fine.dim)] + ["re", "im"]
    meta = dict(manifest(cfg, "solve"), n_samples=n, second_moment=a_t)
    path = write_csv(os.path.join(cfg["experiment"]["out"], "expected_wavefunction.csv"),
                     cols, rows, meta)
    print(f"solve: {n} samples, N = {system.N}, A(T) = {a_t:.8g}; wrote {path}", file=out)
    return mean


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="msrb", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a full experiment"),
                           ("basis-build", "build (or reuse) the snapshot cache"),
                           ("pod", "compress cached snapshots into reduced bases"),
                           ("solve", "online stage with the cached reduced bases")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        for flag in FLAG_FIELDS:
            sp.add_argument("--" + flag.replace("_", "-"), dest=flag, default=None,
                            metavar="VALUE", help=f"override {FLAG_FIELDS[flag]}")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {FLAG_FIELDS[f]: getattr(args, f) for f in FLAG_FIELDS}
    if overrides.get("online.seed") is not None:
        overrides["offline.seed"] = overrides["online.seed"]
    try:
        cfg = load_config(args.config, overrides)
        bench = ex.Workbench()
        if args.command == "basis-build":
            stage_basis_build(cfg, bench)
        elif args.command == "pod":
            stage_pod(cfg, bench)
        elif args.command == "solve":
            stage_solve(cfg, bench)
        else:
            meta = manifest(cfg, "run")
            for stem, table in run_experiment(cfg, bench).items():
                extras = {k: v for k, v in table.extras.items()
                          if isinstance(v, (int, float, str))}
                path = write_csv(os.path.join(cfg["experiment"]["out"], stem + ".csv"),
                                 table.columns, table.rows, dict(meta, **extras))
                print(f"wrote {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CacheMismatchError as exc:
        print(f"cache mismatch: {exc}", file=sys.stderr)
        return 3
    except (DefinitenessError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
