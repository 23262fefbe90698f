"""Experiment configuration: TOML schema, defaults and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from ..bcd import BaselineKind
from ..network import InstanceConfig
from ..pafl import Algorithm

KINDS = ("convergence", "baseline-compare", "sweep", "eh-table", "fl-training")

# short names accepted wherever an instance parameter is named
ALIASES = {
    "F_m": "leaf_max_freq",
    "F_n": "relay_max_freq",
    "P_m": "leaf_max_power_dbm",
    "P_n": "relay_max_power_dbm",
    "K": "n_rounds",
    "node_count": "n_relays",
}

_INSTANCE_FIELDS = {f.name: f for f in dataclasses.fields(InstanceConfig)}


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration; ``key`` names the offender."""

    def __init__(self, message, key=None, line=None):
        self.key, self.line = key, line
        where = f"{key}: " if key else ""
        at = f" (line {line})" if line is not None else ""
        super().__init__(f"{where}{message}{at}")


def resolve_parameter(name: str) -> str:
    field_name = ALIASES.get(name, name)
    if field_name not in _INSTANCE_FIELDS:
        raise ConfigError("unknown instance parameter", key=name)
    return field_name


@dataclass
class SolverConfig:
    tol: float = 1e-4
    max_iter: int = 30
    sca_steps: int = 1
    audit_tol: float = 1e-8


@dataclass
class SweepConfig:
    parameter: str
    grid: list
    schemes: list = field(default_factory=lambda: ["proposed", "greedy"])


@dataclass
class BaselineConfig:
    schemes: list = field(default_factory=lambda: [k.value for k in BaselineKind])


@dataclass
class EHTableConfig:
    node_counts: list = field(default_factory=lambda: [3, 6, 9])
    scheme: str = "proposed"


@dataclass
class FLSection:
    rounds: int = 50
    local_steps: int = 50
    lr: float = 1.0
    lam: float = 0.5
    weight_rule: str = "data-size"
    algorithms: list = field(default_factory=lambda: [a.value for a in Algorithm])
    n_clients: int = 10
    n_classes: int = 10
    dim: int = 20
    dominant: int = 2
    dominant_frac: float = 0.95
    cluster_spread: float = 0.5
    noise: float = 1.0


@dataclass
class ExperimentConfig:
    kind: str = "baseline-compare"
    seed: int = 0
    replicates: int = 1
    seeds: list | None = None          # explicit instance seeds; overrides seed/replicates
    out: str = "results"
    instance: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: list = field(default_factory=list)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    eh_table: EHTableConfig = field(default_factory=EHTableConfig)
    fl: FLSection = field(default_factory=FLSection)

    # derived -------------------------------------------------------------
    def instance_config(self, **extra) -> InstanceConfig:
        overrides = {resolve_parameter(k): v for k, v in self.instance.items()}
        overrides.update(extra)
        return dataclasses.replace(InstanceConfig(), **overrides)

    def replicate_seeds(self) -> list:
        from .runner import cell_seed
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [cell_seed(self.seed, i) for i in range(self.replicates)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["seeds"] is None:
            del d["seeds"]
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def validate(self) -> "ExperimentConfig":
        validate(self)
        return self


# parsing -----------------------------------------------------------------

def _number(value, key, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key=key)
    if integer and not float(value).is_integer():
        raise ConfigError(f"expected an integer, got {value!r}", key=key)
    return int(value) if integer else float(value)


def _coerce_instance_value(name, value, key):
    default = _INSTANCE_FIELDS[name].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", key=key)
        return value
    if isinstance(default, tuple) or isinstance(value, list):
        if not isinstance(value, (list, tuple)):
            if name == "outage_prob":
                return _number(value, key)
            raise ConfigError(f"expected a list, got {value!r}", key=key)
        integer = isinstance(default, tuple) and isinstance(default[0], int)
        items = tuple(_number(v, f"{key}[{i}]", integer) for i, v in enumerate(value))
        if isinstance(default, tuple) and len(items) != len(default):
            raise ConfigError(f"expected {len(default)} values, got {len(items)}", key=key)
        return items
    return _number(value, key, integer=isinstance(default, int))


def _section(cls, data, prefix, required=()):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", key=prefix)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError("unknown key", key=f"{prefix}.{k}")
    for k in required:
        if k not in data:
            raise ConfigError("missing required key", key=f"{prefix}.{k}")
    out = {}
    for k, v in data.items():
        kind, key = names[k].type, f"{prefix}.{k}"
        if kind in ("float", "int"):
            v = _number(v, key, integer=kind == "int")
        elif kind == "str" and not isinstance(v, str):
            raise ConfigError(f"expected a string, got {v!r}", key=key)
        elif kind == "list" and not isinstance(v, list):
            raise ConfigError(f"expected a list, got {v!r}", key=key)
        out[k] = v
    return cls(**out)


_TOP = {f.name for f in dataclasses.fields(ExperimentConfig)}


def from_dict(data: dict) -> ExperimentConfig:
    for k in data:
        if k not in _TOP:
            raise ConfigError("unknown key", key=k)
    top = {}
    for k in ("kind", "out"):
        if k in data:
            if not isinstance(data[k], str):
                raise ConfigError(f"expected a string, got {data[k]!r}", key=k)
            top[k] = data[k]
    for k in ("seed", "replicates"):
        if k in data:
            top[k] = _number(data[k], k, integer=True)
    if "seeds" in data:
        if not isinstance(data["seeds"], list):
            raise ConfigError("expected a list of integers", key="seeds")
        top["seeds"] = [_number(s, f"seeds[{i}]", integer=True) for i, s in enumerate(data["seeds"])]
    inst = data.get("instance", {})
    if not isinstance(inst, dict):
        raise ConfigError("expected a table", key="instance")
    instance = {}
    for k, v in inst.items():
        name = resolve_parameter(k) if k in ALIASES or k in _INSTANCE_FIELDS else None
        if name is None:
            raise ConfigError("unknown key", key=f"instance.{k}")
        instance[k] = _coerce_instance_value(name, v, f"instance.{k}")
    sweeps = data.get("sweep", [])
    if isinstance(sweeps, dict):
        sweeps = [sweeps]
    if not isinstance(sweeps, list):
        raise ConfigError("expected an array of tables", key="sweep")
    cfg = ExperimentConfig(
        instance=instance,
        solver=_section(SolverConfig, data.get("solver", {}), "solver"),
        sweep=[_section(SweepConfig, s, f"sweep[{i}]", required=("parameter", "grid"))
               for i, s in enumerate(sweeps)],
        baseline=_section(BaselineConfig, data.get("baseline", {}), "baseline"),
        eh_table=_section(EHTableConfig, data.get("eh_table", {}), "eh_table"),
        fl=_section(FLSection, data.get("fl", {}), "fl"),
        **top)
    return validate(cfg)


def _instance_error(cfg, exc, extra_key=None):
    """Map an InstanceConfig validation message back to the user's key."""
    msg = str(exc)
    field_name = msg.split(" ", 1)[0]
    for k in cfg.instance:
        if resolve_parameter(k) == field_name:
            return ConfigError(msg, key=f"instance.{k}")
    return ConfigError(msg, key=extra_key or f"instance.{field_name}")


def _schemes(names, key):
    for i, s in enumerate(names):
        try:
            BaselineKind(s)
        except ValueError:
            raise ConfigError(f"unknown scheme {s!r}; expected one of "
                              f"{[k.value for k in BaselineKind]}", key=f"{key}[{i}]") from None


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every referenced parameter against the network-model ranges."""
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}; expected one of {list(KINDS)}", key="kind")
    if cfg.replicates < 1:
        raise ConfigError("must be at least 1", key="replicates")
    if cfg.seeds is not None and not cfg.seeds:
        raise ConfigError("must not be empty", key="seeds")
    if any(s < 0 for s in ([cfg.seed] + list(cfg.seeds or []))):
        raise ConfigError("seeds must be nonnegative", key="seeds" if cfg.seeds else "seed")
    try:
        base = cfg.instance_config()
        base.validate()
    except ValueError as exc:
        raise _instance_error(cfg, exc) from None

    s = cfg.solver
    if not s.tol > 0:
        raise ConfigError("must be positive", key="solver.tol")
    if s.max_iter < 1 or s.sca_steps < 1:
        raise ConfigError("must be at least 1", key="solver.max_iter" if s.max_iter < 1 else "solver.sca_steps")
    if not s.audit_tol > 0:
        raise ConfigError("must be positive", key="solver.audit_tol")

    seen = set()
    for i, sw in enumerate(cfg.sweep):
        key = f"sweep[{i}]"
        try:
            name = resolve_parameter(sw.parameter)
        except ConfigError:
            raise ConfigError(f"unknown instance parameter {sw.parameter!r}", key=f"{key}.parameter") from None
        if sw.parameter in seen:
            raise ConfigError(f"parameter {sw.parameter!r} is swept twice", key=f"{key}.parameter")
        seen.add(sw.parameter)
        if not sw.grid:
            raise ConfigError("must not be empty", key=f"{key}.grid")
        _schemes(sw.schemes, f"{key}.schemes")
        if not sw.schemes:
            raise ConfigError("must not be empty", key=f"{key}.schemes")
        grid = []
        for j, value in enumerate(sw.grid):
            v = _coerce_instance_value(name, value, f"{key}.grid[{j}]")
            try:
                dataclasses.replace(base, **{name: v}).validate()
            except ValueError as exc:
                raise ConfigError(str(exc), key=f"{key}.grid[{j}]") from None
            grid.append(v)
        sw.grid = grid
    if cfg.kind == "sweep" and not cfg.sweep:
        raise ConfigError("a sweep experiment needs at least one [[sweep]] table", key="sweep")

    _schemes(cfg.baseline.schemes, "baseline.schemes")
    if not cfg.baseline.schemes:
        raise ConfigError("must not be empty", key="baseline.schemes")
    _schemes([cfg.eh_table.scheme], "eh_table.scheme")
    for j, n in enumerate(cfg.eh_table.node_counts):
        v = _coerce_instance_value("n_relays", n, f"eh_table.node_counts[{j}]")
        try:
            dataclasses.replace(base, n_relays=v).validate()
        except ValueError as exc:
            raise ConfigError(str(exc), key=f"eh_table.node_counts[{j}]") from None

    fl = cfg.fl
    for name in ("rounds", "local_steps", "n_clients", "n_classes", "dim"):
        if getattr(fl, name) < 1:
            raise ConfigError("must be at least 1", key=f"fl.{name}")
    if not 1 <= fl.dominant <= fl.n_classes:
        raise ConfigError("must lie in [1, n_classes]", key="fl.dominant")
    if not 0 <= fl.dominant_frac <= 1:
        raise ConfigError("must lie in [0, 1]", key="fl.dominant_frac")
    for name in ("lr", "cluster_spread", "noise"):
        if not getattr(fl, name) > 0:
            raise ConfigError("must be positive", key=f"fl.{name}")
    if not fl.lam >= 0:
        raise ConfigError("must be nonnegative", key="fl.lam")
    if fl.weight_rule not in ("data-size", "uniform", "inverse-loss"):
        raise ConfigError(f"unknown weight rule {fl.weight_rule!r}", key="fl.weight_rule")
    for j, a in enumerate(fl.algorithms):
        try:
            Algorithm(a)
        except ValueError:
            raise ConfigError(f"unknown algorithm {a!r}", key=f"fl.algorithms[{j}]") from None
    return cfg


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else len(text.splitlines())
        msg = re.sub(r"\s*\(at [^)]*\)$", "", str(exc))
        raise ConfigError(f"parse error: {msg}", line=line) from None
    return from_dict(data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text())


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.dumps())
