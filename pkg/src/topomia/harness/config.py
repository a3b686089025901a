"""Experiment configuration: YAML tree, defaults, validation, hashing, seed fan-out."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .. import mia_core, text_metrics
from ..errors import ConfigError
from ..toy_vlm.model import TrainConfig
from ..topo_reg import TopoConfig

SYNTHETIC = "synthetic"
EXTERNAL_LOG = "external-log"
TOY_MODEL_TAG = "toy-vlm"


@dataclass
class DatasetConfig:
    kind: str = SYNTHETIC
    n_members: int = 60
    n_nonmembers: int = 60
    member_fraction: float = 0.8
    image_height: int = 12
    image_width: int = 12
    noise_pool: int = 2**16
    path: str | None = None  # external-log only


@dataclass
class EmbeddingConfig:
    kind: str = text_metrics.BUILTIN
    dimension: int = text_metrics.DEFAULT_DIMENSION
    source: str | None = None


@dataclass
class ModelConfig:
    sheet_height: int = 6
    sheet_width: int = 6


@dataclass
class TrainingConfig:
    epochs: int = 300
    learning_rate: float = 1.0
    batch_size: int = 8
    sigma: float = 1.0
    epsilon: float = 1e-12


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    taus: list[float] = field(default_factory=lambda: [0.0, 2.0, 3.0])
    granularities: list[int] = field(default_factory=lambda: [10, 20, 30, 40, 50])
    repeats: int = 5
    metrics: list[str] = field(default_factory=lambda: list(mia_core.METRICS))
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    master_seed: int = 42
    output_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        ds = self.dataset
        if ds.kind not in (SYNTHETIC, EXTERNAL_LOG):
            raise ConfigError(f"dataset.kind must be {SYNTHETIC!r} or {EXTERNAL_LOG!r}, got {ds.kind!r}")
        if ds.kind == EXTERNAL_LOG:
            if not ds.path:
                raise ConfigError("dataset.path is required for an external-log dataset")
            if not Path(ds.path).is_file():
                raise ConfigError(f"external caption log not found: {ds.path}")
        else:
            if ds.n_members < 1 or ds.n_nonmembers < 1:
                raise ConfigError("dataset needs at least one member and one non-member")
            if not 0.0 < ds.member_fraction <= 1.0:
                raise ConfigError("dataset.member_fraction must be in (0, 1]")
            if ds.image_height < 1 or ds.image_width < 1:
                raise ConfigError("image dimensions must be positive")
            if not self.taus:
                raise ConfigError("taus must be non-empty")
            smallest = min(ds.n_members, ds.n_nonmembers)
            too_big = [g for g in self.granularities if g > smallest]
            if too_big:
                raise ConfigError(f"granularities {too_big} exceed the smallest class size {smallest}")
        if any((not math.isfinite(t)) or t < 0 for t in self.taus):
            raise ConfigError("taus must be finite and >= 0")
        if len(set(self.taus)) != len(self.taus):
            raise ConfigError("taus must be distinct")
        if not self.granularities or any(g < 1 for g in self.granularities):
            raise ConfigError("granularities must be a non-empty list of positive integers")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")
        if not self.metrics or any(m not in mia_core.METRICS for m in self.metrics):
            raise ConfigError(f"metrics must be a non-empty subset of {list(mia_core.METRICS)}")
        if self.embedding.kind not in (text_metrics.BUILTIN, text_metrics.PRECOMPUTED):
            raise ConfigError(f"unknown embedding kind {self.embedding.kind!r}")
        if self.embedding.kind == text_metrics.PRECOMPUTED and not (
            self.embedding.source and Path(self.embedding.source).is_file()
        ):
            raise ConfigError(f"precomputed embedding file not found: {self.embedding.source}")
        if self.embedding.dimension < 1:
            raise ConfigError("embedding.dimension must be positive")
        if self.model.sheet_height < 1 or self.model.sheet_width < 1:
            raise ConfigError("sheet dimensions must be positive")
        tr = self.train
        if tr.epochs < 0 or tr.learning_rate < 0 or tr.batch_size < 1 or tr.sigma <= 0 or tr.epsilon <= 0:
            raise ConfigError("invalid training settings")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        return self

    # -- conversions -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        try:
            cfg = _build(cls, data or {}, "")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.taus = [float(t) for t in cfg.taus]
        cfg.granularities = [int(g) for g in cfg.granularities]
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form; output_dir is not part of the identity."""
        doc = self.to_dict()
        doc.pop("output_dir")
        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def train_config(self, tau: float) -> TrainConfig:
        tr = self.train
        return TrainConfig(
            epochs=tr.epochs,
            learning_rate=tr.learning_rate,
            batch_size=tr.batch_size,
            seed=derive_seed(self.master_seed, "train", tau),
            topo=TopoConfig(tau=float(tau), sigma=tr.sigma, epsilon=tr.epsilon),
        )

    def embedding_provider(self) -> text_metrics.EmbeddingProvider:
        emb = self.embedding
        if emb.kind == text_metrics.PRECOMPUTED:
            return text_metrics.EmbeddingProvider.from_file(emb.source)
        return text_metrics.EmbeddingProvider.builtin(emb.dimension)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {where or 'top level'}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read a YAML config (or start from defaults) and apply non-None overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    cfg = ExperimentConfig.from_dict(data)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "taus":
            value = [float(v) for v in value]
        elif key == "granularities":
            value = [int(v) for v in value]
        setattr(cfg, key, value)
    return cfg.validate()


def derive_seed(master_seed: int, stage: str, tau: float | None = None) -> int:
    """64-bit stage seed from ``(master_seed, stage, tau)``; adding a tau never moves the others."""
    key = json.dumps([int(master_seed), stage, None if tau is None else float(tau)])
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "big")


def format_tau(tau: float) -> str:
    return f"{float(tau):g}"


def regime_name(tau: float) -> str:
    return {0.0: "Baseline", 2.0: "Neuro", 3.0: "Neuro++"}.get(float(tau), f"tau={format_tau(tau)}")
