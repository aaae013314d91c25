"""Serialization: model round-trip, matrix fixtures and result files.

Floats go through JSON with Python's shortest round-trip repr, so a model
written by :func:`dump_model` rebuilds to bit-identical matrices.
"""

from __future__ import annotations

import csv
import json
import platform
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .moma import FAILED, ModuleSpec, Structure, SystemModel

MATRIX_FMT = "%.12e"


# -- matrix fixtures ------------------------------------------------------------

def write_matrix(path, m) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(m, dtype=float)), fmt=MATRIX_FMT, delimiter=" ")


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=float))


# -- model round-trip ----------------------------------------------------------

def structure_to_json(s: Structure):
    if s.kind in ("series", "parallel"):
        return s.kind
    if s.kind == "k_out_of_n":
        return {"k_out_of_n": int(s.k)}
    if s.kind == "explicit" and s.function is None:
        return {"path_sets": [sorted(p) for p in s.path_sets]}
    raise ConfigError(f"structure of kind {s.kind!r} cannot be serialized")


def _vec(v) -> list[float]:
    return [float(x) for x in np.asarray(v, dtype=float).ravel()]


def _mat(m) -> list[list[float]]:
    return [_vec(r) for r in np.atleast_2d(np.asarray(m, dtype=float))]


def spec_to_json(spec: ModuleSpec) -> dict:
    units = []
    for j, u in enumerate(spec.units):
        d = {"name": u.name, "lifetime": {"alpha": _vec(u.lifetime.alpha), "T": _mat(u.lifetime.T)},
             "repair_law": _vec(spec.unit_repair_law(j))}
        if u.phase_labels is not None:
            d["phase_labels"] = list(u.phase_labels)
        units.append(d)
    out = {"name": spec.name, "structure": structure_to_json(spec.structure), "units": units}
    if spec.shock is not None:
        out["shock"] = {"D0": _mat(spec.shock.D0), "D1": _mat(spec.shock.D1), "initial": _vec(spec.shock.initial)}
        out["p1"] = float(spec.p1)
    if spec.replacement_law is not None:
        out["replacement_law"] = _vec(spec.replacement_law)
    if spec.optimal_states is not None:
        out["optimal_states"] = [["F" if x is FAILED else x for x in st] for st in spec.optimal_states]
    return out


def system_to_config(system: SystemModel, extra: dict | None = None) -> dict:
    """Canonical configuration (explicit PH matrices, one entry per unit) of a built system."""
    cfg = dict(extra or {})
    cfg["system"] = {**cfg.get("system", {}), "structure": structure_to_json(system.structure),
                     "replacement_law": _vec(system.beta)}
    cfg["modules"] = [spec_to_json(m.spec) for m in system.modules]
    return cfg


def dump_model(system: SystemModel, path=None, extra: dict | None = None) -> dict:
    """Config plus the built generator and partitions; written to ``path`` if given."""
    doc = {
        "config": system_to_config(system, extra),
        "Q": _mat(system.Q),
        "alpha": _vec(system.alpha),
        "labels": system.labels,
        "partition": {"n_u1": int(system.n_u1), "n_up": int(system.n_up), "down": int(system.d)},
    }
    if path is not None:
        Path(path).write_text(json.dumps(doc))
    return doc


def load_model(source) -> SystemModel:
    """Rebuild a model written by :func:`dump_model` and check it reproduces the stored generator."""
    from .config import load_config

    doc = json.loads(Path(source).read_text()) if not isinstance(source, dict) else source
    cfg = load_config(doc["config"])
    system = cfg.system
    if "Q" in doc and not np.array_equal(system.Q, np.asarray(doc["Q"], dtype=float)):
        raise ConfigError("rebuilt generator differs from the stored one", path=str(source)[:80])
    return system


# -- results --------------------------------------------------------------------

def results_schema() -> dict:
    return json.loads(resources.files("modmaint.data").joinpath("results_schema.json").read_text())


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def run_metadata(seed=None, **extra) -> dict:
    import matplotlib
    import scipy

    from . import __version__

    meta = {"package_version": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if seed is not None:
        meta["seed"] = int(seed)
    meta.update(extra)
    return meta


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        raise TypeError(type(o).__name__)

    path.write_text(json.dumps(payload, indent=2, default=default) + "\n")
    return path
