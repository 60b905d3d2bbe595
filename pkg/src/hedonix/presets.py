"""Bundled synthetic-market specs and ready-to-run pipeline configurations."""

from __future__ import annotations

from .config import (
    EmbeddingSettings,
    IndexSettings,
    InferenceSettings,
    NetworkSettings,
    PathSettings,
    PipelineConfig,
    SplitSettings,
    TrainingSettings,
)
from .errors import ConfigError
from .synth import MarketSpec


def small_market_spec(seed: int = 0) -> MarketSpec:
    """A market small enough for fast smoke runs of the whole pipeline."""
    return MarketSpec(
        n_products=90,
        n_periods=10,
        seed=seed,
        truth="linear",
        inflation=1.01,
        turnover=0.25,
        active_fraction=0.7,
        price_noise_sd=1.5,
        quantity_elasticity=1.0,
        buckets_per_attribute=(3, 3, 3),
        synonyms_per_bucket=2,
        image_dim=4,
    )


def uniform_inflation_spec(seed: int = 0) -> MarketSpec:
    """Noise-free market with exact 2 percent monthly inflation."""
    return MarketSpec(
        n_products=500,
        n_periods=36,
        seed=seed,
        truth="linear",
        inflation=1.02,
        turnover=0.3,
        active_fraction=0.6,
        price_noise_sd=0.0,
        buckets_per_attribute=(4, 4, 4),
        synonyms_per_bucket=2,
        image_dim=8,
        image_noise_sd=0.05,
    )


def benchmark_spec(seed: int = 0) -> MarketSpec:
    """The standard predictive benchmark: nonlinear truth, moderate noise.

    Descriptions are long enough for text pooling to average out synonym
    and filler draws, and the image vectors carry realistic noise, so
    text does most of the predictive work.
    """
    return MarketSpec(
        n_products=2000,
        n_periods=24,
        seed=seed,
        truth="nonlinear",
        interaction_strength=30.0,
        inflation=1.005,
        turnover=0.3,
        active_fraction=0.7,
        price_noise_sd=6.0,
        quantity_elasticity=1.5,
        buckets_per_attribute=(5, 5, 5),
        synonyms_per_bucket=2,
        description_sentences=6,
        image_dim=8,
        image_noise_sd=0.6,
    )


def drift_spec(seed: int = 0) -> MarketSpec:
    """Stationary truth with multiplicative noise and bouncing quantities.

    The stock-up term makes demand dip after a discount, the behaviour
    that lets frequently chained superlative indices drift.
    """
    return MarketSpec(
        n_products=300,
        n_periods=37,
        seed=seed,
        truth="linear",
        inflation=1.0,
        turnover=0.2,
        active_fraction=0.6,
        price_noise_sd=0.2,
        noise_model="multiplicative",
        quantity_elasticity=1.5,
        quantity_stockup=0.6,
        quantity_noise_sd=0.3,
        image_dim=0,
    )


MARKET_PRESETS = {
    "small": small_market_spec,
    "uniform": uniform_inflation_spec,
    "benchmark": benchmark_spec,
    "drift": drift_spec,
}


def market_preset(name: str, seed: int = 0) -> MarketSpec:
    try:
        return MARKET_PRESETS[name](seed)
    except KeyError:
        raise ConfigError(
            f"unknown market preset {name!r}; choose from {sorted(MARKET_PRESETS)}"
        ) from None


def small_pipeline_config(output_dir: str, seed: int = 0) -> PipelineConfig:
    """Self-contained pipeline config over the small synthetic market."""
    return PipelineConfig(
        seed=seed,
        paths=PathSettings(output_dir=output_dir),
        synthetic=small_market_spec(seed),
        embedding=EmbeddingSettings(dim=12, window=2, epochs=50, learning_rate=5.0),
        network=NetworkSettings(hidden_widths=(24, 12, 6), activation="relu"),
        training=TrainingSettings(
            learning_rate=0.02, epochs=60, batch_size=32, price_transform="identity"
        ),
        split=SplitSettings(fractions=(0.7, 0.15, 0.15)),
        index=IndexSettings(lags=(1,), base_period=0, combine=False),
        inference=InferenceSettings(alpha=0.1, ridge=1e-8),
    )
