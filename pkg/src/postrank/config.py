"""Run configuration: one flat set of fields, loaded from ``key = value`` files
(values are JSON) and overridden from the command line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import SynthConfig
from .model import VARIANTS, ModelConfig
from .ranking import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # synthetic data
    vocab_size: int = 100
    l_D: int = 16
    l_I: int = 8
    d_I: int = 16
    topics: int = 125
    posts_per_topic: int = 8
    key_tokens: int | None = None
    overlap: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    noise: tuple = (2.0, 1.5, 1.0, 0.5, 0.0)
    # model
    embed_dim: int = 128
    text_dim: int = 128
    kernel_sizes: tuple = (1, 3, 5)
    d_c: int = 128
    graph_layers: int = 2
    graph_hidden: int | None = None
    # training
    batch_size: int = 4
    gamma: float = 1.0
    lr: float = 1e-3
    epochs: int = 10
    rel_threshold: int = 3
    ablate: str = "none"

    def synth(self) -> SynthConfig:
        return SynthConfig(
            vocab_size=self.vocab_size, l_D=self.l_D, l_I=self.l_I, d_I=self.d_I,
            topics=self.topics, posts_per_topic=self.posts_per_topic, key_tokens=self.key_tokens,
            overlap=tuple(self.overlap), noise=tuple(self.noise), seed=self.seed,
        )

    def model(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab_size, embed_dim=self.embed_dim, text_dim=self.text_dim,
            kernel_sizes=tuple(self.kernel_sizes), l_D=self.l_D, l_I=self.l_I, d_I=self.d_I,
            d_c=self.d_c, graph_layers=self.graph_layers, graph_hidden=self.graph_hidden,
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, gamma=self.gamma, lr=self.lr, epochs=self.epochs,
            seed=self.seed, rel_threshold=self.rel_threshold,
        )

    def validate(self) -> "RunConfig":
        try:
            self.synth()
            self.model()
            self.train()
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from None
        if self.ablate not in VARIANTS:
            raise ConfigError(f"unknown ablation {self.ablate!r}; choose from {sorted(VARIANTS)}")
        if not 1 <= self.rel_threshold <= 4:
            raise ConfigError("rel_threshold must be in 1..4")
        return self

    def to_text(self) -> str:
        return "".join(f"{k} = {json.dumps(list(v) if isinstance(v, tuple) else v)}\n" for k, v in asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config field {key!r}")
    default = _FIELDS[key].default
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return tuple(value)
    if isinstance(default, bool) or value is None:
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    expected = type(default) if default is not None else int
    if not isinstance(value, expected) or isinstance(value, bool):
        raise ConfigError(f"{key} must be of type {expected.__name__}, got {value!r}")
    return value


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            raise ConfigError(f"{source}:{no}: value for {key!r} is not valid JSON") from None
        out[key] = _coerce(key, parsed)
    return out


def build_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        values.update(parse_config_text(text, str(path)))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    return RunConfig(**values).validate()
