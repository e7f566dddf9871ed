"""Run configuration: sectioned ``key = value`` text with validated fields.

Example::

    [train]
    learning_rate = 1e-4
    batch_size = 64

    [loss]
    lambda_diversity = 1.0

Unknown sections or keys are rejected with the offending line number.
Precedence when merging is flags > file > defaults (see :func:`resolve`).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .augment import AugmentConfig
from .errors import ConfigError, ContractError
from .frontend import CLIP_SECONDS, FLOOR_EPS
from .losses import LossWeights
from .network import NetworkConfig


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 20
    tau: float = 0.995
    seed: int = 0
    precision: str = "single"
    symmetric: bool = False
    checkpoint_every: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    record_time: bool = False


@dataclass(frozen=True)
class FrontendConfig:
    clip_seconds: float = CLIP_SECONDS
    floor_eps: float = FLOOR_EPS


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.1
    iterations: int = 300
    source: str = "online"
    level: str = "embedding"
    seed: int = 0


@dataclass(frozen=True)
class Config:
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def network_config(self) -> NetworkConfig:
        """Network settings with the dtype implied by ``train.precision``."""
        dtype = "float64" if self.train.precision == "double" else "float32"
        return replace(self.network, dtype=dtype)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}


SECTIONS = {f.name: f for f in fields(Config)}


def _coerce(raw: str, default: Any, where: str, line: int | None):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            items = tuple(type(default[0])(p) for p in parts)
            if len(items) != len(default):
                raise ValueError(raw)
            return items
        return raw
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {where}", line) from None


def _validate(cfg: Config) -> Config:
    t = cfg.train
    checks = [
        (t.learning_rate > 0, "train.learning_rate must be positive"),
        (t.batch_size >= 2, "train.batch_size must be at least 2"),
        (t.epochs >= 1, "train.epochs must be positive"),
        (0.0 <= t.tau <= 1.0, "train.tau must lie in [0, 1]"),
        (t.precision in ("single", "double"), "train.precision must be 'single' or 'double'"),
        (t.checkpoint_every >= 1, "train.checkpoint_every must be positive"),
        (0.0 <= t.adam_beta1 < 1.0 and 0.0 <= t.adam_beta2 < 1.0, "adam betas must lie in [0, 1)"),
        (t.adam_eps > 0, "train.adam_eps must be positive"),
        (cfg.loss.lambda_diversity >= 0, "loss.lambda_diversity must be non-negative"),
        (cfg.loss.lambda_decorrelation >= 0, "loss.lambda_decorrelation must be non-negative"),
        (cfg.augment.scale[0] > 0 and cfg.augment.scale[0] <= cfg.augment.scale[1], "augment.scale must be an increasing positive range"),
        (cfg.augment.ratio[0] > 0 and cfg.augment.ratio[0] <= cfg.augment.ratio[1], "augment.ratio must be an increasing positive range"),
        (0.0 <= cfg.augment.mix_max <= 1.0, "augment.mix_max must lie in [0, 1]"),
        (cfg.augment.fader >= 0, "augment.fader must be non-negative"),
        (cfg.network.n_mels >= 4 and cfg.network.channels >= 1, "network sizes must be positive"),
        (cfg.network.hidden_dim >= 1 and cfg.network.out_dim >= 1, "network sizes must be positive"),
        (cfg.frontend.clip_seconds > 0, "frontend.clip_seconds must be positive"),
        (cfg.frontend.floor_eps > 0, "frontend.floor_eps must be positive"),
        (cfg.probe.learning_rate > 0 and cfg.probe.iterations >= 1, "probe budget must be positive"),
        (cfg.probe.source in ("online", "target"), "probe.source must be 'online' or 'target'"),
        (cfg.probe.level in ("embedding", "projection"), "probe.level must be 'embedding' or 'projection'"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    return cfg


def apply_overrides(cfg: Config, overrides: Mapping[str, Any], lines: Mapping[str, int] | None = None) -> Config:
    """Apply ``{"section.key": value}`` overrides; string values are parsed."""
    grouped: dict[str, dict[str, Any]] = {}
    for dotted, value in overrides.items():
        line = (lines or {}).get(dotted)
        section, _, key = dotted.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}", line)
        current = getattr(cfg, section)
        if key not in {f.name for f in fields(current)}:
            raise ConfigError(f"unknown key {dotted!r}", line)
        default = getattr(current, key)
        if isinstance(value, str) and not isinstance(default, str):
            value = _coerce(value, default, dotted, line)
        grouped.setdefault(section, {})[key] = value
    changes = {}
    for section, kv in grouped.items():
        try:
            changes[section] = replace(getattr(cfg, section), **kv)
        except ContractError as exc:
            line = min((lines or {}).get(f"{section}.{k}", 0) for k in kv) or None
            raise ConfigError(str(exc), line) from None
    return replace(cfg, **changes)


def parse_text(text: str) -> tuple[dict[str, str], dict[str, int]]:
    """Parse config text into ``{"section.key": raw}`` plus line numbers."""
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        dotted = f"{section}.{key}"
        if dotted in values:
            raise ConfigError(f"duplicate key {dotted!r}", lineno)
        values[dotted] = value
        lines[dotted] = lineno
    return values, lines


def loads(text: str, base: Config | None = None) -> Config:
    values, lines = parse_text(text)
    cfg = apply_overrides(base or Config(), values, lines)
    try:
        return _validate(cfg)
    except ConfigError as exc:
        # point at the line that set the offending field, when there is one
        for dotted, lineno in lines.items():
            if dotted in str(exc):
                raise ConfigError(str(exc), lineno) from None
        raise


def load(path) -> Config:
    return loads(Path(path).read_text())


def dumps(cfg: Config) -> str:
    out = []
    for section, values in cfg.to_dict().items():
        out.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def from_dict(data: Mapping[str, Mapping[str, Any]]) -> Config:
    flat = {}
    for section, values in data.items():
        for key, value in values.items():
            flat[f"{section}.{key}"] = tuple(value) if isinstance(value, list) else value
    return _validate(apply_overrides(Config(), flat))


def resolve(path=None, flags: Mapping[str, Any] | None = None) -> Config:
    """Defaults, then the file at ``path``, then ``flags`` (highest precedence)."""
    cfg = load(path) if path is not None else Config()
    if flags:
        cfg = _validate(apply_overrides(cfg, {k: v for k, v in flags.items() if v is not None}))
    return cfg
