"""Training and run configuration with validation and presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError

BACKENDS = ("box", "beta")
DTYPES = ("float32", "float64")


@dataclass
class TrainConfig:
    backend: str = "box"
    dim: int = 400
    margin: float = 24.0
    negatives: int = 128
    context_samples: int = 120
    lr: float = 1e-4
    batch_size: int = 128
    var_weight: float = 0.1
    pos_dim: int = 108
    role_dim: int = 108
    type_dim: int = 108
    use_caqr: bool = True
    use_position: bool = True
    use_role: bool = True
    use_type: bool = True
    use_relation_induced: bool = True
    alpha_in: float = 0.02
    init_range: Optional[float] = None
    seed: int = 0
    max_steps: int = 1000
    checkpoint_every: int = 0
    workers: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        check = _Checker()
        check.choice("backend", self.backend, BACKENDS)
        check.choice("dtype", self.dtype, DTYPES)
        check.positive("margin", self.margin)
        check.positive("lr", self.lr)
        check.at_least("negatives", self.negatives, 1)
        check.at_least("context_samples", self.context_samples, 0)
        check.at_least("batch_size", self.batch_size, 1)
        check.at_least("dim", self.dim, 1)
        check.at_least("pos_dim", self.pos_dim, 1)
        check.at_least("role_dim", self.role_dim, 1)
        check.at_least("type_dim", self.type_dim, 1)
        check.at_least("var_weight", self.var_weight, 0)
        check.at_least("alpha_in", self.alpha_in, 0)
        check.at_least("seed", self.seed, 0)
        check.at_least("max_steps", self.max_steps, 0)
        check.at_least("checkpoint_every", self.checkpoint_every, 0)
        check.at_least("workers", self.workers, 1)
        if self.init_range is not None:
            check.positive("init_range", self.init_range)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def resolved_init_range(self) -> float:
        if self.init_range is not None:
            return float(self.init_range)
        return (self.margin + 2.0) / self.dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "") -> "TrainConfig":
        return _build(cls, data, prefix)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# Small-scale defaults that train in seconds on a laptop.
DESK_PRESET = {
    "dim": 32,
    "negatives": 16,
    "context_samples": 120,
    "lr": 0.01,
    "batch_size": 32,
    "pos_dim": 16,
    "role_dim": 16,
    "type_dim": 16,
    "margin": 6.0,
    "max_steps": 500,
}

PRESETS = {"paper": {}, "desk": DESK_PRESET}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


@dataclass
class Paths:
    triples: Optional[str] = None
    train_triples: Optional[str] = None
    full_triples: Optional[str] = None
    train_queries: Optional[str] = None
    valid_queries: Optional[str] = None
    queries: Optional[str] = None
    checkpoint: Optional[str] = None
    metrics: Optional[str] = None
    report: Optional[str] = None
    baseline_report: Optional[str] = None
    out_dir: Optional[str] = None


@dataclass
class QueryGenOptions:
    types: list = field(default_factory=lambda: ["1p", "2p", "3p", "2i", "3i", "ip", "pi", "2u", "up"])
    per_type: int = 100
    require_hard: bool = False
    seed: int = 0


@dataclass
class KGOptions:
    train_fraction: float = 0.9
    num_entities: int = 0
    num_relations: int = 0
    num_triples: int = 0
    seed: int = 0


@dataclass
class EvalOptions:
    targets: str = "hard"
    batch_size: int = 256


@dataclass
class AnswerOptions:
    type: str = "1p"
    anchors: list = field(default_factory=list)
    relations: list = field(default_factory=list)
    top_k: int = 10


@dataclass
class BenchOptions:
    samples: list = field(default_factory=lambda: [60, 120, 240, 480])
    calls: int = 1000
    dim: int = 400


@dataclass
class RunConfig:
    preset: str = "paper"
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)
    generate: QueryGenOptions = field(default_factory=QueryGenOptions)
    kg: KGOptions = field(default_factory=KGOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    answer: AnswerOptions = field(default_factory=AnswerOptions)
    bench: BenchOptions = field(default_factory=BenchOptions)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


_SECTIONS = {
    "paths": Paths,
    "generate": QueryGenOptions,
    "kg": KGOptions,
    "eval": EvalOptions,
    "answer": AnswerOptions,
    "bench": BenchOptions,
}


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a key/value document")
    unknown = sorted(set(data) - {"preset", "train", *_SECTIONS})
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    name = data.get("preset", "paper")
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}")
    train_data = data.get("train", {})
    if not isinstance(train_data, dict):
        raise ConfigError("train", "expected a key/value section")
    train = _build(TrainConfig, {**PRESETS[name], **train_data}, "train.")
    sections = {key: _build(cls, data.get(key, {}), key + ".") for key, cls in _SECTIONS.items()}
    _check_options(sections)
    return RunConfig(preset=name, train=train, **sections)


def parse_config(path: Optional[str]) -> RunConfig:
    """Read a JSON config file; a missing path or empty document gives all defaults."""
    if path is None:
        return run_config_from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    if not text.strip():
        return run_config_from_dict({})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return run_config_from_dict(data)


def _check_options(s: dict) -> None:
    check = _Checker()
    check.at_least("generate.per_type", s["generate"].per_type, 1)
    if not 0.0 < s["kg"].train_fraction <= 1.0:
        raise ConfigError("kg.train_fraction", "must lie in (0, 1]")
    check.choice("eval.targets", s["eval"].targets, ("hard", "all"))
    check.at_least("eval.batch_size", s["eval"].batch_size, 1)
    check.at_least("answer.top_k", s["answer"].top_k, 1)
    check.at_least("bench.calls", s["bench"].calls, 1)
    check.at_least("bench.dim", s["bench"].dim, 1)
    for k in s["bench"].samples:
        check.at_least("bench.samples", k, 0)


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a key/value section")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown key")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(prefix + key, names[key], value)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if prefix and not exc.key.startswith(prefix):
            raise ConfigError(prefix + exc.key, exc.detail) from None
        raise


def _coerce(key: str, f, value):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if value is None:
        if default is None:
            return None
        raise ConfigError(key, "must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
        return value
    if isinstance(default, float) or (default is None and f.name == "init_range"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "expected a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list")
        return list(value)
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    return value


class _Checker:
    def positive(self, key, value):
        if not value > 0:
            raise ConfigError(key, f"must be > 0, got {value!r}")

    def at_least(self, key, value, low):
        if value < low:
            raise ConfigError(key, f"must be >= {low}, got {value!r}")

    def choice(self, key, value, options):
        if value not in options:
            raise ConfigError(key, f"must be one of {list(options)}, got {value!r}")
