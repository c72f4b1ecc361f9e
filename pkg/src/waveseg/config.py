"""Run configuration: JSON file + dotted-key overrides -> validated dataclasses.

A run config has a section per concern (model, optim, loss, data, eval,
train) plus the seed. Every field has a default except the dataset location:
exactly one of ``data.root`` or ``data.synth`` must be provided by the time a
command needs samples. ``dump_config`` emits JSON that re-parses to an
identical config, which keeps experiment scripts diffable.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import load_dataset, synth_generate
from .errors import ConfigError
from .models import ModelConfig
from .training import LossConfig, OptimConfig

DATA_ROOT_ENV = "WAVESEG_DATA_ROOT"


@dataclass
class SynthConfig:
    n_train: int = 256
    n_val: int = 64
    dims: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.n_train < 1 or self.n_val < 0:
            raise ConfigError(f"SynthConfig: sample counts must be positive; got {self.n_train}/{self.n_val}")


@dataclass
class DataConfig:
    root: Optional[str] = None
    synth: Optional[SynthConfig] = None
    num_classes: int = 19
    ignore_label: Optional[int] = None
    train_split: str = "train"
    val_split: str = "val"

    def resolve_root(self) -> Optional[str]:
        if self.root is not None:
            return self.root
        return os.environ.get(DATA_ROOT_ENV)


@dataclass
class EvalConfig:
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)
    ms: bool = False
    report: Optional[str] = None
    records: Optional[str] = None

    def __post_init__(self):
        if not self.scales:
            raise ConfigError("EvalConfig: scales must not be empty")


@dataclass
class TrainConfig:
    epochs: int = 30
    max_iterations: Optional[int] = None
    checkpoint_every: Optional[int] = None
    val_every: int = 1
    stop_miou: Optional[float] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"TrainConfig: epochs must be >= 1; got {self.epochs}")
        if self.val_every < 1:
            raise ConfigError(f"TrainConfig: val_every must be >= 1; got {self.val_every}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError(
                f"model.num_classes ({self.model.num_classes}) != data.num_classes ({self.data.num_classes}); "
                "set both to the same value"
            )
        return self

    def load_split(self, split: str):
        """Materialize one dataset split from disk or the synthetic generator."""
        if self.data.synth is not None:
            syn = self.data.synth
            if split == self.data.train_split:
                return synth_generate(self.seed, syn.n_train, syn.dims, self.data.num_classes)
            return synth_generate(self.seed + 1, syn.n_val, syn.dims, self.data.num_classes)
        root = self.data.resolve_root()
        if root is None:
            raise ConfigError(
                f"no dataset location: set data.root, data.synth, or the {DATA_ROOT_ENV} environment variable"
            )
        return load_dataset(root, split, self.data.num_classes, self.data.ignore_label)


_SECTIONS = {
    "model": ModelConfig,
    "optim": OptimConfig,
    "loss": LossConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "train": TrainConfig,
}
_NESTED = {("data", "synth"): SynthConfig}


def _coerce(value):
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _build_dataclass(cls, payload: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - names)
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]!r} (valid keys: {', '.join(sorted(names))})")
    kwargs = {}
    for key, value in payload.items():
        sub = _NESTED.get((path, key))
        if sub is not None and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{key} must be an object")
            value = _build_dataclass(sub, value, f"{path}.{key}")
        else:
            value = _coerce(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid {path} section: {exc}")


def config_from_dict(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = sorted(set(payload) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config section {unknown[0]!r}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in payload:
            section = payload[name]
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            kwargs[name] = _build_dataclass(cls, section, name)
    if "seed" in payload:
        seed = payload["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"seed must be an integer; got {seed!r}")
        kwargs["seed"] = seed
    return RunConfig(**kwargs).validate()


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: RunConfig) -> str:
    """Resolved config as JSON; re-parsing the dump gives an identical config."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load_config(path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    return config_from_dict(payload)


def field_paths() -> list[tuple[str, object]]:
    """Dotted leaf paths and defaults, for mirroring config keys as CLI flags."""
    paths: list[tuple[str, object]] = [("seed", 0)]
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            if (section, f.name) in _NESTED:
                sub = _NESTED[(section, f.name)]
                for g in dataclasses.fields(sub):
                    default = g.default if g.default is not dataclasses.MISSING else None
                    paths.append((f"{section}.{f.name}.{g.name}", default))
                continue
            default = f.default if f.default is not dataclasses.MISSING else None
            paths.append((f"{section}.{f.name}", default))
    return paths


def apply_overrides(payload: dict, overrides: dict[str, object]) -> dict:
    """Set dotted keys into a nested config dict (creating sections as needed)."""
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = payload
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(f"cannot override {dotted!r}: {part!r} is not a section")
            node = nxt
        node[parts[-1]] = value
    return payload
