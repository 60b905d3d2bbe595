"""Hedonic price models and quality-adjusted price indices.

The package ingests a (product, month) transaction panel and a text
catalog, trains word embeddings and a multi-task price network from
scratch, runs hold-out inference on the network's value embeddings, and
produces matched, hedonic, and Jevons price indices with monthly and
yearly chaining, all validated against a synthetic market with known
ground truth.
"""

from ._accel import backend
from .market import (
    ProductCatalogEntry,
    TransactionPanel,
    TransactionRecord,
    compute_price,
    growth_ratio,
    ingest_catalog,
    ingest_transactions,
    match_set,
    turnover_rate,
)
from .embeddings import (
    AttentionParams,
    EmbeddingMatrix,
    ResidualBlockParams,
    SentenceEmbedding,
    Vocabulary,
    Word2VecConfig,
    attention_forward,
    build_vocab,
    concat_embedding,
    cosine_similarity,
    residual_block_forward,
    sentence_embedding,
    tokenize,
    train_word2vec,
    word_probability,
)
from .features import FeatureMatrix, FeatureVector, build_feature_matrix
from .network import (
    DataSplit,
    NetworkConfig,
    NetworkParams,
    TrainingConfig,
    ValueEmbeddingTable,
    extract_value_embeddings,
    forward,
    r_squared,
    refit_heads,
    split_stratified,
    train,
)
from .inference import (
    ConfidenceInterval,
    OlsFit,
    SplitAggregate,
    hedonic_ci,
    median_aggregate,
    ols_on_embeddings,
    predictive_ci,
    pvalues_bonferroni,
    standard_error,
)
from .indices import (
    HedonicSurface,
    IndexSeries,
    PricedBasket,
    annualized_rate,
    bilateral_hedonic,
    bilateral_matched,
    chain,
    geometric_combine,
    jevons,
)
from .synth import DriftStats, GeneratedPanel, MarketSpec, drift_experiment, generate_panel, true_index

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
