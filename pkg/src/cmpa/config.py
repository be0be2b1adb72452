"""Run configuration and its flat ``section.key = value`` text format.

Example::

    regime = joint
    criterion = note_accuracy
    loss.C = 5
    optimizer.regression.lr = 0.005
    matrix.seeds = [0, 1, 2, 3, 4]

Values are JSON literals; anything that does not parse as JSON is taken as a
bare string. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import CRITERIA
from .losses import LossConfig
from .model import EncoderConfig

REGIMES = ("baseline", "two_step", "joint")
CHUNK_POLICIES = ("center", "mean")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSettings:
    conv_channels: tuple = (4, 8, 16)
    kernel_size: int = 7
    stride: int = 3


@dataclass(frozen=True)
class PhaseSettings:
    lr: float
    epochs: int


@dataclass(frozen=True)
class OptimizerSettings:
    momentum: float = 0.9
    weight_decay: float = 1e-5
    # encoder pre-training in the two-step regime
    contrastive: PhaseSettings = PhaseSettings(0.1, 150)
    # every MSE-bearing phase: baseline, joint, and the two-step head phase
    regression: PhaseSettings = PhaseSettings(0.005, 300)


@dataclass(frozen=True)
class EvalSettings:
    chunk_policy: str = "center"
    n_chunks: int = 5
    perplexity: float = 30.0


@dataclass(frozen=True)
class DataSettings:
    manifest: str = ""


@dataclass(frozen=True)
class MatrixSettings:
    regimes: tuple = REGIMES
    criteria: tuple = CRITERIA
    seeds: tuple = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class RunConfig:
    regime: str = "joint"
    criterion: str = "note_accuracy"
    seed: int = 0
    batch_size: int = 32
    patience: int = 75
    chunk_len: int = 1000
    loss: LossConfig = LossConfig()
    encoder: EncoderSettings = EncoderSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    eval: EvalSettings = EvalSettings()
    data: DataSettings = DataSettings()
    matrix: MatrixSettings = MatrixSettings()

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime: unknown value {self.regime!r}; expected one of {REGIMES}")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion: unknown value {self.criterion!r}; expected one of {CRITERIA}")
        if self.batch_size < 2:
            raise ConfigError("batch_size: must be at least 2")
        if self.patience < 1:
            raise ConfigError("patience: must be positive")
        if self.chunk_len < 1:
            raise ConfigError("chunk_len: must be positive")
        for name in ("contrastive", "regression"):
            phase = getattr(self.optimizer, name)
            if not phase.lr > 0:
                raise ConfigError(f"optimizer.{name}.lr: must be positive")
            if phase.epochs < 1:
                raise ConfigError(f"optimizer.{name}.epochs: must be positive")
        if self.eval.chunk_policy not in CHUNK_POLICIES:
            raise ConfigError(f"eval.chunk_policy: expected one of {CHUNK_POLICIES}")
        bad = set(self.matrix.regimes) - set(REGIMES)
        if bad:
            raise ConfigError(f"matrix.regimes: unknown regimes {sorted(bad)}")
        bad = set(self.matrix.criteria) - set(CRITERIA)
        if bad:
            raise ConfigError(f"matrix.criteria: unknown criteria {sorted(bad)}")

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.encoder.conv_channels, self.encoder.kernel_size,
                             self.encoder.stride, self.chunk_len)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_flat(self) -> dict:
        return _flatten(self)

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        return with_overrides(cls(), flat)


def _flatten(obj, prefix=""):
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(_flatten(value, key + "."))
        else:
            out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _cast(key, value, default):
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, str):
            return str(value)
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                value = [value]
            sample = default[0] if default else None
            return tuple(_cast(key, v, sample) if sample is not None else v for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use value {value!r}") from None
    return value


def _set(obj, parts, value, key):
    name = parts[0]
    names = {f.name for f in dataclasses.fields(obj)}
    if name not in names:
        raise ConfigError(f"{key}: unknown config key")
    current = getattr(obj, name)
    if len(parts) == 1:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{key}: is a section, not a key")
        new = _cast(key, value, current)
    else:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"{key}: unknown config key")
        new = _set(current, parts[1:], value, key)
    try:
        return dataclasses.replace(obj, **{name: new})
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: {exc}") from None


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    for key, value in overrides.items():
        cfg = _set(cfg, key.split("."), value, key)
    return cfg


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_assignments(lines) -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        out[key.strip()] = parse_value(value)
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the config file at ``path``, then ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = with_overrides(cfg, parse_assignments(path.read_text(encoding="utf-8").splitlines()))
    return with_overrides(cfg, parse_assignments(overrides))


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.to_flat().items())
