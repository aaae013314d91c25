"""Model configuration files.

A configuration is a JSON document validated against the bundled schema
(``data/config_schema.json``).  Schema and parse errors are reported with
the JSON path and the line of the offending value.  Unit lifetimes are
either explicit ``{"alpha": [...], "T": [[...]]}`` pairs or the shorthands
``exp(rate)`` and ``erlang(k, rate)``; rates are per model time unit
(``time_unit_hours`` hours).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .errors import ConfigError, ModelError
from .maintenance import CostParams
from .markov import MapProcess, PhDistribution
from .moma import ModuleSpec, Structure, SystemModel, UnitSpec, build_system
from .simulate import SimConfig

_SHORTHAND = re.compile(r"^\s*(exp|erlang)\s*\((.*)\)\s*$")
_RESERVED = {"shock": "system-wide shocks are not supported; attach a shock process to each exposed module instead"}


def _schema() -> dict:
    return json.loads(resources.files("modmaint.data").joinpath("config_schema.json").read_text())


def bundled_config_path(name: str = "sem_bop") -> Path:
    return Path(str(resources.files("modmaint.data").joinpath(f"{name}.json")))


def _locate(text: str, path) -> int | None:
    """1-based line of the JSON value at ``path`` (JSON is a YAML subset)."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def _json_path(path) -> str:
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


@dataclass
class ModelConfig:
    """A validated configuration and the objects derived from it."""

    raw: dict
    source: str = "<config>"
    system: SystemModel | None = None
    specs: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.raw.get("name", "model")

    @property
    def time_unit_hours(self) -> float:
        return float(self.raw.get("time_unit_hours", 1.0))

    def to_hours(self, t):
        return np.asarray(t, dtype=float) * self.time_unit_hours

    def to_model_time(self, hours):
        return np.asarray(hours, dtype=float) / self.time_unit_hours

    @property
    def horizon(self) -> float | None:
        h = self.raw["system"].get("horizon_hours")
        return None if h is None else float(self.to_model_time(h))

    @property
    def accounting(self) -> str:
        return self.raw.get("policy", {}).get("accounting", "per_module")

    @property
    def form(self) -> str:
        return self.raw.get("policy", {}).get("form", "literal")

    def costs(self, c_down_per_hour: float | None = None) -> CostParams:
        c = self.raw.get("costs", {})
        per_hour = c.get("c_down_per_hour", 0.0) if c_down_per_hour is None else c_down_per_hour
        return CostParams(
            C_I=float(c.get("C_I", 1.0)),
            restore=tuple(float(x) for x in c.get("restore", (1.0, 0.5))),
            C_RM=c.get("C_RM", 3.0),
            C_SR=float(c.get("C_SR", 9.0)),
            # mu/h -> mu per model time unit
            C_down=float(per_hour) * self.time_unit_hours,
        )

    def scenarios(self) -> list[tuple[str, CostParams]]:
        sc = self.raw.get("scenarios") or [{"name": "base", "c_down_per_hour": self.raw.get("costs", {}).get("c_down_per_hour", 0.0)}]
        return [(s["name"], self.costs(s["c_down_per_hour"])) for s in sc]

    def sim_config(self, **overrides) -> SimConfig:
        s = dict(self.raw.get("simulation", {}))
        tau_max = s.pop("tau_max_hours", None)
        kw = {k: v for k, v in s.items() if k in ("R", "M", "seed", "a_rule", "block_size", "workers")}
        kw["horizon"] = self.horizon
        kw["tau_max"] = None if tau_max is None else float(self.to_model_time(tau_max))
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SimConfig(**kw)


def parse_lifetime(spec, where: str = "lifetime") -> PhDistribution:
    if isinstance(spec, str):
        m = _SHORTHAND.match(spec)
        if not m:
            raise ConfigError(f"unrecognized lifetime shorthand {spec!r}", path=where)
        try:
            args = [float(a) for a in m.group(2).split(",")]
        except ValueError:
            raise ConfigError(f"bad arguments in {spec!r}", path=where) from None
        if m.group(1) == "exp":
            if len(args) != 1 or args[0] <= 0:
                raise ConfigError("exp(rate) needs one positive rate", path=where)
            return PhDistribution.exponential(args[0])
        if len(args) != 2 or args[0] < 1 or args[0] != int(args[0]) or args[1] <= 0:
            raise ConfigError("erlang(k, rate) needs an integer k >= 1 and a positive rate", path=where)
        return PhDistribution.erlang(int(args[0]), args[1])
    return PhDistribution(np.asarray(spec["alpha"], dtype=float), np.asarray(spec["T"], dtype=float))


def parse_structure(spec) -> Structure:
    if spec is None or spec == "series":
        return Structure.series()
    if spec == "parallel":
        return Structure.parallel()
    if "k_out_of_n" in spec:
        return Structure.k_out_of_n(int(spec["k_out_of_n"]))
    return Structure.from_path_sets(spec["path_sets"])


def _module_spec(mod: dict, idx: int, text: str | None) -> ModuleSpec:
    name = mod.get("name", f"module{idx + 1}")
    units, laws = [], []
    for j, u in enumerate(mod["units"]):
        where = f"{_json_path(['modules', idx, 'units', j])} ({name})"
        line = _locate(text, ["modules", idx, "units", j, "lifetime"]) if text else None
        try:
            ph = parse_lifetime(u["lifetime"], where)
            labels = tuple(u["phase_labels"]) if "phase_labels" in u else None
            law = np.asarray(u["repair_law"], dtype=float) if "repair_law" in u else ph.alpha
            for c in range(u.get("count", 1)):
                uname = u.get("name", f"u{j + 1}")
                units.append(UnitSpec(ph, labels, f"{uname}{c + 1}" if u.get("count", 1) > 1 else uname))
                laws.append(law)
        except ConfigError as exc:
            raise ConfigError(exc.message, line=line, path=where) from None
        except ModelError as exc:
            raise ModelError(f"{where}: unit {u.get('name', j)!r} of module {name!r}: {exc}") from None
    shock = None
    if mod.get("shock") is not None:
        s = mod["shock"]
        try:
            shock = MapProcess(np.asarray(s["D0"], float), np.asarray(s["D1"], float),
                               s.get("initial"))
        except ModelError as exc:
            raise ModelError(f"{_json_path(['modules', idx, 'shock'])}: shock process of module {name!r}: {exc}") from None
    try:
        structure = parse_structure(mod.get("structure"))
        structure.validate(len(units))
        return ModuleSpec(tuple(units), structure, name, shock, float(mod.get("p1", 1.0)), tuple(laws),
                          None if "replacement_law" not in mod else np.asarray(mod["replacement_law"], float),
                          None if "optimal_states" not in mod else tuple(tuple(s) for s in mod["optimal_states"]))
    except ModelError as exc:
        raise ConfigError(f"module {name!r}: {exc}", line=_locate(text, ["modules", idx]) if text else None,
                          path=_json_path(["modules", idx])) from None


def validate_config(raw, text: str | None = None, source: str = "<config>") -> None:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", line=1, path=source)
    for key, why in _RESERVED.items():
        if key in raw.get("system", {}) or f"system_{key}" in raw:
            p = ["system", key] if key in raw.get("system", {}) else [f"system_{key}"]
            raise ConfigError(f"reserved field {_json_path(p)}: {why}",
                              line=_locate(text, p) if text else None, path=source)
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        p = list(err.absolute_path)
        raise ConfigError(f"{_json_path(p)}: {err.message}", line=_locate(text, p) if text else None,
                          path=source)


def load_config(source, build: bool = True) -> ModelConfig:
    """Read, validate and (optionally) build a model from a config path, JSON text or dict."""
    text = None
    name = "<config>"
    if isinstance(source, dict):
        raw = source
    else:
        p = Path(source)
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            name = str(p)
            try:
                text = p.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc.strerror}", path=name) from None
        else:
            text = str(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno, path=name) from None
    validate_config(raw, text, name)
    cfg = ModelConfig(raw, name)
    if build:
        build_from_config(cfg, text)
    return cfg


def build_from_config(cfg: ModelConfig, text: str | None = None) -> SystemModel:
    raw = cfg.raw
    specs = [_module_spec(m, i, text) for i, m in enumerate(raw["modules"])]
    system_raw = raw["system"]
    try:
        structure = parse_structure(system_raw.get("structure"))
        structure.validate(len(specs))
        beta = system_raw.get("replacement_law")
        cfg.system = build_system(specs, structure, None if beta is None else np.asarray(beta, float))
    except ModelError as exc:
        raise ConfigError(f"system: {exc}", line=_locate(text, ["system"]) if text else None,
                          path=cfg.source) from None
    cfg.specs = specs
    return cfg.system
