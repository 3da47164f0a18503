"""On-disk cache of offline products, keyed by a hash of the producing config."""

import hashlib
import json
import os

import numpy as np

from .msbasis import SnapshotSet
from .pod import ReducedBasisSet


class CacheMismatchError(RuntimeError):
    """A cached stage was produced by a different configuration."""


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def canonical_json(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_default)


def config_hash(cfg):
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


class StageCache:
    """One ``.npz`` file per stage inside ``root``; each carries its config hash."""

    def __init__(self, root):
        self.root = root

    def path(self, stage):
        return os.path.join(self.root, f"{stage}.npz")

    def stored_hash(self, stage):
        p = self.path(stage)
        if not os.path.exists(p):
            return None
        with np.load(p) as data:
            return str(data["config_hash"])

    def check(self, stage, key):
        """True on a hit, False when absent; raises on a hash mismatch."""
        stored = self.stored_hash(stage)
        if stored is None:
            return False
        if stored != key:
            raise CacheMismatchError(
                f"{self.path(stage)} was built from config {stored[:12]}, "
                f"current config is {key[:12]}")
        return True

    def _write(self, stage, key, arrays):
        os.makedirs(self.root, exist_ok=True)
        tmp = self.path(stage) + ".tmp.npz"
        np.savez(tmp, config_hash=np.array(key), **arrays)
        os.replace(tmp, self.path(stage))

    def save_snapshots(self, key, snapshot_sets):
        arrays = {"nodes": np.array([s.node for s in snapshot_sets]),
                  "xi": snapshot_sets[0].xi}
        for s in snapshot_sets:
            arrays[f"support_{s.node}"] = s.support
            arrays[f"values_{s.node}"] = s.values
            arrays[f"shifts_{s.node}"] = s.shifts
        self._write("snapshots", key, arrays)

    def load_snapshots(self, key):
        if not self.check("snapshots", key):
            return None
        with np.load(self.path("snapshots")) as d:
            xi = d["xi"]
            return [SnapshotSet(int(k), d[f"support_{k}"], xi, d[f"values_{k}"], d[f"shifts_{k}"])
                    for k in d["nodes"]]

    def save_reduced(self, key, reduced_sets):
        arrays = {"nodes": np.array([r.node for r in reduced_sets]),
                  "inner_product": np.array(reduced_sets[0].inner_product)}
        for r in reduced_sets:
            arrays[f"support_{r.node}"] = r.support
            arrays[f"zeta0_{r.node}"] = r.zeta0
            arrays[f"modes_{r.node}"] = r.modes
            arrays[f"eig_{r.node}"] = r.eigenvalues
        self._write("reduced", key, arrays)

    def load_reduced(self, key):
        if not self.check("reduced", key):
            return None
        with np.load(self.path("reduced")) as d:
            ip = str(d["inner_product"])
            return [ReducedBasisSet(int(k), d[f"support_{k}"], d[f"zeta0_{k}"], d[f"modes_{k}"],
                                    d[f"eig_{k}"], ip) for k in d["nodes"]]
