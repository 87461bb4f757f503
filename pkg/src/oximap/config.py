"""Run configuration: one JSON document covering model, generator, and
training options. Unknown keys are rejected loudly; the persisted copy
always contains every field with its effective value.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .models import ModelConfig
from .synth import SynthParams

__all__ = ["TrainOptions", "RunConfig", "load_config", "save_config"]


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-4
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2 or self.lr <= 0 or self.k < 2:
            raise ConfigError(
                f"invalid training options: epochs={self.epochs}, batch_size={self.batch_size}, "
                f"lr={self.lr}, k={self.k}"
            )


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    synth: SynthParams
    train: TrainOptions

    def resolved(self) -> dict:
        """All fields with their effective values, ready to persist."""
        doc = {"model": asdict(self.model), "synth": asdict(self.synth), "train": asdict(self.train)}
        doc["model"]["stage_channels"] = list(doc["model"]["stage_channels"])
        doc["synth"]["hr_hz"] = list(doc["synth"]["hr_hz"])
        return doc


_SECTIONS = {"model": ModelConfig, "synth": SynthParams, "train": TrainOptions}
_TUPLE_KEYS = {"stage_channels", "hr_hz"}


def _build_section(name: str, cls, doc: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r} section: {sorted(unknown)}")
    kwargs = {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in doc.items()}
    return cls(**kwargs)


def load_config(source) -> RunConfig:
    """Build a RunConfig from a dict, JSON text, or JSON file path."""
    if isinstance(source, RunConfig):
        return source
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    elif isinstance(source, str):
        doc = json.loads(source)
    elif isinstance(source, dict):
        doc = source
    else:
        raise ConfigError(f"cannot load config from {type(source).__name__}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    parts = {name: _build_section(name, cls, doc.get(name, {})) for name, cls in _SECTIONS.items()}
    return RunConfig(model=parts["model"], synth=parts["synth"], train=parts["train"])


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.resolved(), f, indent=2, sort_keys=True)
        f.write("\n")
