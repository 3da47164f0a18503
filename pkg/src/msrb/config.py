"""INI experiment configs with typed fields and path-qualified validation errors.

Numbers may be written as simple arithmetic with ``pi`` (``1/16``,
``-pi``, ``2*pi/64``); list-valued fields are comma separated.
"""

import ast
import configparser
import math
import operator

EXPERIMENTS = ("converge-h", "converge-pod", "converge-qmc", "offline-q", "qmc-eps-scaling",
               "qmc-dim-scaling", "anderson-1d", "anderson-2d", "decay-diagnostic")


class ConfigError(ValueError):
    """Invalid config; the message starts with the offending ``section.key``."""


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def _arith(text):
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {text!r}")
    return ev(ast.parse(text.strip(), mode="eval"))


def _float(text):
    return float(_arith(text))


def _int(text):
    val = _arith(text)
    if val != int(val):
        raise ValueError(f"{text!r} is not an integer")
    return int(val)


def _str(text):
    return text.strip()


def _list(conv):
    def parse(text):
        items = [t for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return [conv(t) for t in items]
    return parse


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)
    return parse


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {"name": (_str, None), "out": (_str, "results"), "cache": (_str, None)},
    "potential": {"kind": (_str, "sect5-multiscale"), "sigma": (_float, 1.0),
                  "beta": (_float, 0.0), "m": (_list(_int), [3]),
                  "E": (_opt(_list(_float)), None)},
    "grid": {"dim": (_int, 1), "domain": (_list(_float), [-math.pi, math.pi]),
             "fine_cells": (_list(_int), [1024]), "coarse_cells": (_list(_int), [64]),
             "l_star": (_opt(_int), None)},
    "physics": {"epsilon": (_list(_float), [1 / 16]), "T": (_float, 1.0),
                "dt": (_opt(_float), None), "n_times": (_int, 0)},
    "offline": {"Q": (_list(_int), [200]), "sampling": (_str, "sobol"),
                "seed": (_int, 0), "m_k": (_list(_int), [3]), "rho": (_opt(_float), None),
                "inner_product": (_str, "L2")},
    "online": {"samples": (_list(_int), [2560]), "sampling": (_str, "sobol"),
               "seed": (_int, 0), "n_ref": (_int, 4000), "mc_replicates": (_int, 8),
               "target": (_float, 4.5e-3), "step": (_int, 40), "method": (_str, "auto"),
               "ref_cells_per_eps": (_int, 64)},
    "decay": {"realizations": (_int, 4), "l_max": (_opt(_int), None)},
}

# command-line flag -> config field
FLAG_FIELDS = {
    "epsilon": "physics.epsilon", "sigma": "potential.sigma", "beta": "potential.beta",
    "m": "potential.m", "coarse_cells": "grid.coarse_cells", "fine_cells": "grid.fine_cells",
    "T": "physics.T", "dt": "physics.dt", "samples": "online.samples",
    "offline_samples": "offline.Q", "seed": "online.seed", "out": "experiment.out",
}


def defaults():
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _set(cfg, path, text):
    sec, _, key = path.partition(".")
    if sec not in SCHEMA or key not in SCHEMA[sec]:
        raise ConfigError(f"{path}: unknown field")
    try:
        cfg[sec][key] = SCHEMA[sec][key][0](str(text))
    except (ValueError, SyntaxError, ZeroDivisionError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(text, overrides=None):
    """Parse INI text, apply ``{"section.key": "value"}`` overrides, validate."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"<file>: {exc}") from None
    cfg = defaults()
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{sec}: unknown section")
        for key, val in parser.items(sec):
            _set(cfg, f"{sec}.{key}", val)
    for path, val in (overrides or {}).items():
        if val is not None:
            _set(cfg, path, val)
    validate(cfg)
    return cfg


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def validate(cfg):
    def need(cond, path, msg):
        if not cond:
            raise ConfigError(f"{path}: {msg}")

    need(cfg["experiment"]["name"] in EXPERIMENTS, "experiment.name",
         f"must be one of {', '.join(EXPERIMENTS)}")
    need(cfg["grid"]["dim"] in (1, 2), "grid.dim", "must be 1 or 2")
    need(len(cfg["grid"]["domain"]) == 2 and cfg["grid"]["domain"][1] > cfg["grid"]["domain"][0],
         "grid.domain", "must be 'a, b' with b > a")
    need(all(n >= 2 for n in cfg["grid"]["fine_cells"]), "grid.fine_cells", "must be >= 2")
    need(all(n >= 2 for n in cfg["grid"]["coarse_cells"]), "grid.coarse_cells", "must be >= 2")
    for f in cfg["grid"]["fine_cells"]:
        for c in cfg["grid"]["coarse_cells"]:
            need(f % c == 0, "grid.coarse_cells", f"{c} does not divide fine cell count {f}")
    need(all(e > 0 for e in cfg["physics"]["epsilon"]), "physics.epsilon", "must be positive")
    need(cfg["physics"]["T"] > 0, "physics.T", "must be positive")
    need(cfg["physics"]["dt"] is None or cfg["physics"]["dt"] > 0, "physics.dt", "must be positive")
    need(cfg["potential"]["sigma"] >= 0, "potential.sigma", "must be non-negative")
    need(all(m >= 1 for m in cfg["potential"]["m"]), "potential.m", "must be >= 1")
    need(all(q >= 2 for q in cfg["offline"]["Q"]), "offline.Q", "must be >= 2")
    need(all(1 <= k for k in cfg["offline"]["m_k"]), "offline.m_k", "must be >= 1")
    rho = cfg["offline"]["rho"]
    need(rho is None or 0 < rho <= 1, "offline.rho", "must lie in (0, 1]")
    need(cfg["offline"]["inner_product"] in ("L2", "H1"), "offline.inner_product", "must be L2 or H1")
    for sec in ("offline", "online"):
        need(cfg[sec]["sampling"] in ("sobol", "mc"), f"{sec}.sampling", "must be sobol or mc")
    need(all(n >= 1 for n in cfg["online"]["samples"]), "online.samples", "must be >= 1")
    need(cfg["online"]["n_ref"] >= 1, "online.n_ref", "must be >= 1")
    need(cfg["online"]["method"] in ("auto", "spectral", "step", "tridiag"), "online.method",
         "must be auto, spectral, step or tridiag")
    l_star = cfg["grid"]["l_star"]
    need(l_star is None or l_star >= 1, "grid.l_star", "must be >= 1")
    return cfg
