"""Scenario configuration: one YAML document covering every module.

Unknown keys and ill-typed values raise :class:`ConfigError` carrying the
dotted field path, before any processing starts.  Every section is
optional except ``seed``.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .joiner import JoinerConfig
from .monitor import WindowConfig
from .policy import DEFAULT_RULES, CostModel, Rule, load_rules
from .scenario import DriftInjection, GeneratorSpec
from .shift import DetectorConfig


@dataclass(frozen=True)
class StreamConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    file: str | None = None


@dataclass(frozen=True)
class SketchConfig:
    error: float = 0.04
    expected_distinct: int = 100_000
    bloom_bits_per_item: float = 5.0
    feature_compression: float = 100.0


@dataclass(frozen=True)
class PredictionConfig:
    accuracy_window: int = 1000
    min_accuracy_count: int = 200
    eddm_warning_ratio: float = 0.95
    eddm_drift_ratio: float = 0.90
    eddm_min_errors: int = 30


@dataclass(frozen=True)
class CostConfig:
    retrain_cost: float = 1000.0
    horizon: float = 10_000.0
    min_cadence: int = 5000
    emergency_p: float = 0.001

    def model(self) -> CostModel:
        return CostModel(self.retrain_cost, self.horizon, self.min_cadence, self.emergency_p)


@dataclass(frozen=True)
class PolicyConfig:
    rules: list = field(default_factory=lambda: [dict(r) for r in DEFAULT_RULES])
    cost: CostConfig = field(default_factory=CostConfig)
    prediction_value: float = 1.0
    evaluate_every: int = 250

    def compiled_rules(self) -> list[Rule]:
        return load_rules(self.rules, "policy.rules")


@dataclass(frozen=True)
class ModelConfig:
    family: str = "sgd_linear_classifier"
    min_examples: int = 500
    initial_examples: int = 2000
    retrain_examples: int = 1000
    max_wait: int = 10_000
    search_budget: int = 4


@dataclass(frozen=True)
class ReservoirConfig:
    capacity: int = 4000
    decay_factor: float = 0.5
    decay_period: int = 2000
    snapshot_every: int = 20_000


@dataclass(frozen=True)
class StoreConfig:
    budget: int = 1 << 30
    segment_cap: int = 1 << 20
    fsync: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    stream: StreamConfig = field(default_factory=StreamConfig)
    injections: list = field(default_factory=list)
    sketch: SketchConfig = field(default_factory=SketchConfig)
    joiner: JoinerConfig = field(default_factory=lambda: JoinerConfig(timeout=5000))
    windows: WindowConfig = field(default_factory=WindowConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    prediction: PredictionConfig = field(default_factory=PredictionConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)
    store: StoreConfig = field(default_factory=StoreConfig)

    def to_dict(self) -> dict[str, Any]:
        return _to_plain(self)

    def with_seed(self, seed: int) -> ScenarioConfig:
        return dataclasses.replace(self, seed=seed)


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def _coerce(value: Any, hint: Any, path: str) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, path)
            except ConfigError as exc:
                errors.append(exc)
        raise errors[0]
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", path)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"expected {len(args)} values", path)
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", path)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", path)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError("expected a string", path)
        return value
    if hint is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError("expected a list", path)
        return list(value)
    return value


def _build(cls: type, data: Any, path: str) -> Any:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path or "<root>")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in fields:
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}" if path else str(key))
    kwargs: dict[str, Any] = {}
    for name, f in fields.items():
        sub = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("required field is missing", sub)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.path and not exc.path.startswith(path):
            raise ConfigError(exc.message, f"{path}.{exc.path.split('.')[-1]}" if path else exc.path) from None
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path or "<root>") from None


def load_config(data: dict[str, Any], base_dir: Path | None = None) -> ScenarioConfig:
    """Validate a parsed document; joiner/sketch/rule checks run here too."""
    cfg = _build(ScenarioConfig, data, "")
    injections = []
    for i, item in enumerate(cfg.injections):
        injections.append(_build(DriftInjection, item, f"injections[{i}]"))
    cfg = dataclasses.replace(cfg, injections=injections)
    cfg.policy.compiled_rules()
    CostConfig.model(cfg.policy.cost)
    if cfg.stream.file is not None and base_dir is not None and not os.path.isabs(cfg.stream.file):
        cfg = dataclasses.replace(cfg, stream=dataclasses.replace(cfg.stream, file=str(base_dir / cfg.stream.file)))
    if cfg.stream.file is None:
        for i, inj in enumerate(injections):
            if inj.start >= cfg.stream.generator.events:
                raise ConfigError("start lies beyond the stream length", f"injections[{i}].start")
    if cfg.model.family not in ("sgd_linear_classifier", "gaussian_naive_bayes"):
        raise ConfigError(f"unknown family {cfg.model.family!r}", "model.family")
    if cfg.model.initial_examples < cfg.model.min_examples or cfg.model.retrain_examples < cfg.model.min_examples:
        raise ConfigError("must be >= model.min_examples", "model.initial_examples")
    if cfg.reservoir.capacity < cfg.model.initial_examples:
        raise ConfigError("must hold at least model.initial_examples", "reservoir.capacity")
    return cfg


def load_config_file(path: str | os.PathLike) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist", "--config")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}", str(p)) from None
    return load_config(data or {}, p.parent)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
