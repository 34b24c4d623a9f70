"""Experiment configuration: strict JSON parsing, validation and ``--set`` overrides."""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .costs import CostModel
from .errors import ConfigError
from .fault_tolerance import FaultToleranceConfig
from .privacy import PrivacyParams
from .selection import SelectionConfig

STRATEGIES = ("proposed", "random", "full", "static_k")
SWEEP_AXES = {
    "epsilon": "privacy.epsilon_round",
    "k": "selection.k_init",
    "failure_prob": "ft.failure_prob_per_round",
    "checkpoint_interval": "ft.checkpoint_interval_steps",
}


@dataclass
class DataConfig:
    source: str = "synthetic"
    n_samples: int = 2000
    n_features: int = 10
    class_sep: float = 1.0
    path: str | None = None
    label_column: str = "label"
    train_fraction: float = 0.8
    normalize: bool = True


@dataclass
class PartitionConfig:
    strategy: str = "dirichlet"
    alpha: float = 0.5


@dataclass
class ModelConfig:
    arch: str = "logistic"
    hidden_width: int = 8


@dataclass
class CapacityConfig:
    low: float = 1.0
    high: float = 1.0


@dataclass
class ExperimentConfig:
    data: DataConfig
    rounds: int
    n_clients: int = 10
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    local_epochs: int = 1
    batch_size: int = 16
    lr: float = 0.1
    server_lr: float = 1.0
    p_avail: float = 0.9
    capacity: CapacityConfig = field(default_factory=CapacityConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    privacy: PrivacyParams = field(default_factory=PrivacyParams)
    ft: FaultToleranceConfig = field(default_factory=FaultToleranceConfig)
    cost_model: CostModel = field(default_factory=CostModel)
    strategy: str = "proposed"
    master_seed: int = 0
    output_dir: str = "runs/default"
    workers: int = 1
    record_wall_time: bool = False


@dataclass
class SweepSpec:
    base: ExperimentConfig
    axis: str
    values: list
    seeds: list
    output_dir: str | None = None
    workers: int = 1


def _hints(cls):
    return typing.get_type_hints(cls)


def _coerce(value, hint, path, errors):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(hint)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path, errors)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path, errors)
    if hint is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            errors.append(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            errors.append(f"{path}: expected a string, got {value!r}")
        return value
    if origin is list or hint is list:
        if not isinstance(value, list):
            errors.append(f"{path}: expected a list, got {value!r}")
        return value
    return value


def _build(cls, data, path, errors):
    if not isinstance(data, dict):
        errors.append(f"{path or '<root>'}: expected an object, got {type(data).__name__}")
        return None
    hints = _hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key in data:
        if key not in known:
            errors.append(f"{path + '.' if path else ''}{key}: unknown key")
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], sub, errors)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            errors.append(f"{sub}: required key missing")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{path or '<root>'}: {exc}")
        return None


def validate(cfg: ExperimentConfig) -> list[str]:
    p = []
    d = cfg.data
    if d.source not in ("synthetic", "csv"):
        p.append(f"data.source: must be 'synthetic' or 'csv', got {d.source!r}")
    if d.source == "synthetic":
        if d.n_samples < 2:
            p.append("data.n_samples: must be >= 2")
        if d.n_features < 1:
            p.append("data.n_features: must be >= 1")
        if not d.class_sep > 0:
            p.append("data.class_sep: must be positive")
    elif d.source == "csv" and not d.path:
        p.append("data.path: required when data.source is 'csv'")
    if not 0 < d.train_fraction < 1:
        p.append("data.train_fraction: must lie in (0, 1)")
    if cfg.rounds < 0:
        p.append("rounds: must be >= 0")
    if cfg.n_clients < 1:
        p.append("n_clients: must be >= 1")
    if cfg.partition.strategy not in ("iid", "dirichlet"):
        p.append(f"partition.strategy: must be 'iid' or 'dirichlet', got {cfg.partition.strategy!r}")
    if not cfg.partition.alpha > 0:
        p.append("partition.alpha: must be positive")
    if cfg.model.arch not in ("logistic", "mlp"):
        p.append(f"model.arch: must be 'logistic' or 'mlp', got {cfg.model.arch!r}")
    if cfg.model.hidden_width < 1:
        p.append("model.hidden_width: must be >= 1")
    if cfg.local_epochs < 0:
        p.append("local_epochs: must be >= 0")
    if cfg.batch_size < 1:
        p.append("batch_size: must be >= 1")
    for name in ("lr", "server_lr"):
        if not getattr(cfg, name) > 0:
            p.append(f"{name}: must be positive")
    if not 0 < cfg.p_avail <= 1:
        p.append("p_avail: must lie in (0, 1]")
    if not 0 < cfg.capacity.low <= cfg.capacity.high:
        p.append("capacity.low: need 0 < low <= high")
    for prefix, sub in (("selection", cfg.selection), ("privacy", cfg.privacy),
                        ("ft", cfg.ft), ("cost_model", cfg.cost_model)):
        p.extend(f"{prefix}.{k}: {msg}" for k, msg in sub.problems())
    if cfg.strategy not in STRATEGIES:
        p.append(f"strategy: must be one of {', '.join(STRATEGIES)}, got {cfg.strategy!r}")
    if cfg.master_seed < 0:
        p.append("master_seed: must be >= 0")
    if cfg.workers < 1:
        p.append("workers: must be >= 1")
    return p


def config_from_dict(data: dict) -> ExperimentConfig:
    errors: list[str] = []
    cfg = _build(ExperimentConfig, data, "", errors)
    if not errors:
        errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _read_json(path) -> object:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def parse_config(path) -> ExperimentConfig:
    return config_from_dict(_read_json(path))


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings to a raw config dict. Values parse as JSON, else as strings."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set {item!r}: expected key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {part} is not an object")
        node[parts[-1]] = value
    return data


def sweep_from_dict(data: dict) -> SweepSpec:
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected an object")
    allowed = {"base", "axis", "values", "seeds", "output_dir", "workers"}
    errors = [f"{k}: unknown key" for k in data if k not in allowed]
    for k in ("base", "axis", "values", "seeds"):
        if k not in data:
            errors.append(f"{k}: required key missing")
    if errors:
        raise ConfigError(errors)
    base = data["base"]
    if not isinstance(base, dict):
        raise ConfigError("base: expected an object")
    base_errors: list[str] = []
    try:
        base_cfg = config_from_dict(base)
    except ConfigError as exc:
        base_errors = [f"base.{e}" for e in exc.problems]
    if data["axis"] not in SWEEP_AXES:
        errors.append(f"axis: must be one of {', '.join(SWEEP_AXES)}, got {data['axis']!r}")
    for k in ("values", "seeds"):
        if not isinstance(data[k], list) or not data[k]:
            errors.append(f"{k}: must be a non-empty list")
    if isinstance(data["seeds"], list) and any(isinstance(s, bool) or not isinstance(s, int) or s < 0
                                               for s in data["seeds"]):
        errors.append("seeds: must be non-negative integers")
    if isinstance(data["values"], list) and any(isinstance(v, bool) or not isinstance(v, (int, float))
                                                for v in data["values"]):
        errors.append("values: must be numbers")
    workers = data.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        errors.append("workers: must be an integer >= 1")
    errors = base_errors + errors
    if errors:
        raise ConfigError(errors)
    return SweepSpec(base_cfg, data["axis"], list(data["values"]), list(data["seeds"]),
                     data.get("output_dir"), workers)


def parse_sweep(path) -> SweepSpec:
    return sweep_from_dict(_read_json(path))


def with_axis_value(base: ExperimentConfig, axis: str, value, seed: int) -> ExperimentConfig:
    """Copy of ``base`` with one sweep axis set and the seed replaced."""
    raw = config_to_dict(base)
    section, key = SWEEP_AXES[axis].split(".")
    raw[section][key] = value
    if axis == "epsilon":
        raw["privacy"]["enabled"] = True
    elif axis == "k":
        sel = raw["selection"]
        sel["k_min"] = min(sel["k_min"], value)
        sel["k_max"] = max(sel["k_max"], value)
    raw["master_seed"] = seed
    return config_from_dict(raw)
