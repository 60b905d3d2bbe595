"""Pipeline configuration: one canonical JSON document drives every stage."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .synth import MarketSpec


@dataclass(frozen=True)
class PathSettings:
    transactions: str | None = None
    catalog: str | None = None
    output_dir: str = "out"


@dataclass(frozen=True)
class EmbeddingSettings:
    dim: int = 16
    window: int = 4
    epochs: int = 60
    learning_rate: float = 5.0
    min_count: int = 1
    mode: str = "average"  # or "concat"
    max_words: int = 16
    weighting: str = "uniform"  # or "inverse_frequency"
    use_images: bool = True


@dataclass(frozen=True)
class NetworkSettings:
    hidden_widths: tuple[int, ...] = (64, 32, 16)
    activation: str = "relu"
    dropout_rate: float | None = None


@dataclass(frozen=True)
class TrainingSettings:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 80
    batch_size: int = 64
    smoothness: float = 0.0
    price_transform: str = "identity"
    include_zero_prices: bool = False
    refit_heads: bool = False  # closed-form per-period head refit after training


@dataclass(frozen=True)
class SplitSettings:
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)


@dataclass(frozen=True)
class IndexSettings:
    lags: tuple[int, ...] = (1, 12)
    base_period: int = 0
    kinds: tuple[str, ...] = ("matched_F", "hedonic_F", "hedonic_L", "hedonic_P", "jevons")
    combine: bool = True


@dataclass(frozen=True)
class InferenceSettings:
    alpha: float = 0.1
    splits: int = 1
    ridge: float | None = None
    robust: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathSettings = field(default_factory=PathSettings)
    synthetic: MarketSpec | None = None
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    network: NetworkSettings = field(default_factory=NetworkSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    index: IndexSettings = field(default_factory=IndexSettings)
    inference: InferenceSettings = field(default_factory=InferenceSettings)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["synthetic"] = None if self.synthetic is None else dataclasses.asdict(self.synthetic)
        return _listify(doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @staticmethod
    def from_dict(doc: dict) -> "PipelineConfig":
        try:
            synth_doc = doc.get("synthetic")
            return PipelineConfig(
                seed=int(doc.get("seed", 0)),
                paths=PathSettings(**doc.get("paths", {})),
                synthetic=None if synth_doc is None else MarketSpec(**_tuplify_spec(synth_doc)),
                embedding=EmbeddingSettings(**doc.get("embedding", {})),
                network=_network_from(doc.get("network", {})),
                training=TrainingSettings(**doc.get("training", {})),
                split=_split_from(doc.get("split", {})),
                index=_index_from(doc.get("index", {})),
                inference=InferenceSettings(**doc.get("inference", {})),
            )
        except TypeError as e:
            raise ConfigError(f"bad configuration: {e}") from None

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"configuration is not valid JSON: {e.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        return PipelineConfig.from_dict(doc)

    @staticmethod
    def load(path: str) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return PipelineConfig.from_json(fh.read())
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {path}") from None


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _tuplify_spec(doc: dict) -> dict:
    doc = dict(doc)
    if isinstance(doc.get("inflation"), list):
        doc["inflation"] = tuple(doc["inflation"])
    if isinstance(doc.get("buckets_per_attribute"), list):
        doc["buckets_per_attribute"] = tuple(doc["buckets_per_attribute"])
    return doc


def _network_from(doc: dict) -> NetworkSettings:
    doc = dict(doc)
    if "hidden_widths" in doc:
        doc["hidden_widths"] = tuple(doc["hidden_widths"])
    return NetworkSettings(**doc)


def _split_from(doc: dict) -> SplitSettings:
    doc = dict(doc)
    if "fractions" in doc:
        doc["fractions"] = tuple(doc["fractions"])
    return SplitSettings(**doc)


def _index_from(doc: dict) -> IndexSettings:
    doc = dict(doc)
    for key in ("lags", "kinds"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return IndexSettings(**doc)
