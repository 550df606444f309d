"""Unified run configuration: one JSON document covering every stage.

Sections map one-to-one onto the module configs (refine, model, train,
embedder, synth) plus bucket edges and the three named seeds.  Parsing is
strict — unknown keys anywhere are rejected — and ``--set a.b.c=value``
overrides are applied to the raw document before validation so every run can
persist its fully resolved configuration.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import InputError
from .ingest import SkipGramConfig
from .metrics import DEFAULT_BUCKET_EDGES
from .sapool import RefineConfig
from .synth import SynthConfig
from .trainer import TrainConfig


@dataclass
class ModelConfig:
    feature_dim: int = 100
    hidden_dim: int = 64
    num_blocks: int = 5
    num_heads: int = 4
    dropout_rate: float = 0.2

    def validate(self) -> "ModelConfig":
        for name in ("feature_dim", "hidden_dim", "num_blocks", "num_heads"):
            if getattr(self, name) < 1:
                raise InputError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_dim % self.num_heads != 0:
            raise InputError(
                f"model.hidden_dim {self.hidden_dim} must be divisible by "
                f"num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InputError(f"model.dropout_rate must be in [0, 1), got {self.dropout_rate}")
        return self


@dataclass
class EmbedderConfig:
    mode: str = "hash"
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025

    def validate(self) -> "EmbedderConfig":
        if self.mode not in ("hash", "skipgram"):
            raise InputError(f"embedder.mode must be 'hash' or 'skipgram', got {self.mode!r}")
        if self.dim < 1:
            raise InputError(f"embedder.dim must be >= 1, got {self.dim}")
        if self.window < 1 or self.negatives < 0 or self.epochs < 1 or self.lr <= 0:
            raise InputError("embedder window/negatives/epochs/lr out of range")
        return self

    def skipgram_config(self) -> SkipGramConfig:
        return SkipGramConfig(window=self.window, negatives=self.negatives,
                              epochs=self.epochs, lr=self.lr)


@dataclass
class Seeds:
    data: int = 1
    model: int = 2
    train: int = 3


_SECTIONS = {
    "refine": RefineConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "embedder": EmbedderConfig,
    "synth": SynthConfig,
    "seeds": Seeds,
}


@dataclass
class RunConfig:
    refine: RefineConfig = field(default_factory=RefineConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seeds: Seeds = field(default_factory=Seeds)
    buckets: tuple[int, ...] = DEFAULT_BUCKET_EDGES

    def validate(self) -> "RunConfig":
        self.refine.validate()
        self.model.validate()
        self.train.validate()
        self.embedder.validate()
        self.synth.validate()
        if self.embedder.dim != self.model.feature_dim:
            raise InputError(
                f"embedder.dim {self.embedder.dim} must equal model.feature_dim "
                f"{self.model.feature_dim}")
        if self.synth.feature_dim != self.model.feature_dim:
            raise InputError(
                f"synth.feature_dim {self.synth.feature_dim} must equal "
                f"model.feature_dim {self.model.feature_dim}")
        if len(self.buckets) == 0 or self.buckets[0] <= 0 or any(
                b <= a for a, b in zip(self.buckets, self.buckets[1:])):
            raise InputError(
                f"buckets must be strictly increasing positive edges, got {self.buckets!r}")
        return self

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["train"]["split"] = list(self.train.split)
        doc["buckets"] = list(self.buckets)
        # The synth seed is owned by seeds.data; keeping it out of the
        # document lets to_dict/from_dict round-trip under strict parsing.
        doc["synth"].pop("seed")
        return doc

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise InputError(f"config document must be an object, got {type(data).__name__}")
        known = set(_SECTIONS) | {"buckets"}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                raise InputError(f"config section {name!r} must be an object")
            if name == "synth" and "seed" in raw:
                raise InputError("synth.seed is not configurable; set seeds.data instead")
            kwargs[name] = _dataclass_from_dict(section_cls, raw, name)
        buckets = data.get("buckets", list(DEFAULT_BUCKET_EDGES))
        if not isinstance(buckets, (list, tuple)):
            raise InputError("buckets must be an array of integers")
        kwargs["buckets"] = tuple(int(b) for b in buckets)
        return cls(**kwargs).validate()


def _dataclass_from_dict(cls, data: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InputError(f"unknown key(s) in {path}: {sorted(unknown)}")
    obj = cls(**data)
    if isinstance(obj, TrainConfig):
        obj.split = tuple(obj.split)
    return obj


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply ``section.key=value`` assignments to a raw config document.

    Values parse as JSON when possible (numbers, booleans, arrays) and fall
    back to plain strings, so ``--set train.lr=0.01`` and
    ``--set embedder.mode=hash`` both work.
    """
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise InputError(f"override must look like key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise InputError(f"cannot descend into non-object config key {part!r}")
            node = nxt
        node[parts[-1]] = value
    return data


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Sequence[str] = ()) -> RunConfig:
    """Read a JSON config file (or start from defaults) and apply overrides."""
    if path is None:
        data: dict = {}
    else:
        p = Path(path)
        if not p.exists():
            raise InputError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise InputError(f"config file {p} is not valid JSON: {e}") from e
    apply_overrides(data, overrides)
    return RunConfig.from_dict(data)
