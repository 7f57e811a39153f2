"""Flat key-value run configuration.

File format, one setting per line::

    # comment
    hidden_dim = 128
    lam = 0.5
    training_relations = r6, r7

Command-line flags override file values. When no file is given, the path in
``$KGADAPT_CONFIG`` (if set) is read.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

CONFIG_ENV = "KGADAPT_CONFIG"


class ConfigError(ValueError):
    """Unparseable file, unknown key, or out-of-range value."""


@dataclass
class RunConfig:
    # artifact paths
    kg: str = ""
    tasks: str = ""
    tables: str = ""
    checkpoint: str = ""
    out: str = ""
    # context graphs
    hops: int = 1
    extra_sample: int = 0
    node_cap: int = 500
    # model
    shots: int = 3
    iterations: int = 4
    hidden_dim: int = 128
    pretrained_dim: int = 100
    lam: float = 0.5
    mlp_layers: int = 2
    concat_head_tail_diff: bool = False
    normalize_weight_head: bool = False
    use_weights: bool = True
    use_support_adaptation: bool = True
    # training
    steps: int = 20000
    warmup_steps: int = 2000
    peak_lr: float = 1e-5
    margin: float = 0.5
    weight_decay: float = 0.01
    negatives_per_positive: int = 1
    training_relations: list[str] = field(default_factory=list)
    checkpoint_every: int = 0
    # pretraining
    pretrain_epochs: int = 100
    pretrain_margin: float = 1.0
    pretrain_lr: float = 0.01
    # synthesis
    entities: int = 200
    num_test_tasks: int = 200
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ["shots", "iterations", "hidden_dim", "pretrained_dim", "mlp_layers", "node_cap",
                    "negatives_per_positive", "entities", "workers"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("hops", "extra_sample", "steps", "warmup_steps", "checkpoint_every", "pretrain_epochs",
                     "num_test_tasks"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.margin < 0 or self.peak_lr <= 0 or self.weight_decay < 0:
            raise ConfigError("margin and weight_decay must be >= 0 and peak_lr > 0")
        if self.steps > 0 and self.steps <= self.warmup_steps:
            raise ConfigError(f"steps ({self.steps}) must exceed warmup_steps ({self.warmup_steps})")

    def model_dict(self) -> dict:
        keys = ["pretrained_dim", "hidden_dim", "iterations", "lam", "mlp_layers", "concat_head_tail_diff",
                "normalize_weight_head", "use_weights", "use_support_adaptation"]
        return {k: getattr(self, k) for k in keys}

    def train_dict(self) -> dict:
        keys = ["shots", "steps", "warmup_steps", "peak_lr", "margin", "seed", "negatives_per_positive",
                "weight_decay", "checkpoint_every"]
        d = {k: getattr(self, k) for k in keys}
        d["training_relations"] = tuple(self.training_relations) or None
        return d

    def to_text(self) -> str:
        """Render every field; ``parse_config_text`` reads it back unchanged."""
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def replace(self, **changes) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return RunConfig(**values)


_TYPES = get_type_hints(RunConfig)
FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def coerce(key: str, raw: str):
    """Convert the string form of ``key`` to its field type."""
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == list[str]:
            return [p.strip() for p in raw.split(",") if p.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """File values (explicit path, else ``$KGADAPT_CONFIG``), then overrides."""
    values: dict = {}
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(), str(p)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)
