"""Product feature vectors: pooled text embedding plus optional image part."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingMatrix, Vocabulary, concat_embedding, sentence_embedding
from .errors import DimensionError, ProductLookupError, ValidationError
from .market import ProductCatalogEntry


@dataclass(frozen=True)
class FeatureVector:
    """One product's network input: text part W and image part I stacked."""

    text_part: np.ndarray
    image_part: np.ndarray | None = None

    @property
    def combined(self) -> np.ndarray:
        if self.image_part is None:
            return self.text_part
        return np.concatenate([self.text_part, self.image_part])


class FeatureMatrix:
    """Row-per-product feature matrix with stable product ordering."""

    def __init__(self, product_ids: Sequence[str], X: np.ndarray, text_dim: int, image_dim: int):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.shape[0] != len(product_ids):
            raise DimensionError("one feature row per product required")
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite feature values")
        X.setflags(write=False)
        self.product_ids = tuple(product_ids)
        self.X = X
        self.text_dim = text_dim
        self.image_dim = image_dim
        self._index = {pid: i for i, pid in enumerate(self.product_ids)}

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def row(self, product_id: str) -> np.ndarray:
        try:
            return self.X[self._index[product_id]]
        except KeyError:
            raise ProductLookupError(product_id) from None

    def subset(self, product_ids: Sequence[str]) -> np.ndarray:
        return self.X[[self._index[p] for p in product_ids]]

    def vector(self, product_id: str) -> FeatureVector:
        row = self.row(product_id)
        image = row[self.text_dim :] if self.image_dim else None
        return FeatureVector(text_part=row[: self.text_dim], image_part=image)


def build_feature_matrix(
    catalog: Sequence[ProductCatalogEntry],
    matrix: EmbeddingMatrix,
    vocab: Vocabulary,
    mode: str = "average",
    max_words: int = 16,
    weighting: str = "uniform",
    use_images: bool = True,
) -> FeatureMatrix:
    """Embed each catalog entry's text and append its image vector.

    ``mode`` selects between averaging word embeddings and concatenating
    the first ``max_words`` of them.
    """
    image_dim = 0
    if use_images:
        dims = {e.image_features.shape[0] for e in catalog if e.image_features is not None}
        if len(dims) > 1:
            raise ValidationError(f"inconsistent image dimensions {sorted(dims)}")
        image_dim = dims.pop() if dims else 0

    rows = []
    ids = []
    for entry in catalog:
        token_ids = vocab.encode(entry.text())
        if mode == "average":
            text = sentence_embedding(matrix, token_ids, weighting=weighting).vector
        elif mode == "concat":
            text = concat_embedding(matrix, token_ids, max_words)
        else:
            raise ValidationError(f"unknown feature mode {mode!r}")
        if image_dim:
            img = entry.image_features
            if img is None:
                img = np.zeros(image_dim)
            rows.append(np.concatenate([text, img]))
        else:
            rows.append(text)
        ids.append(entry.product_id)
    text_dim = matrix.dim if mode == "average" else matrix.dim * max_words
    return FeatureMatrix(ids, np.vstack(rows), text_dim=text_dim, image_dim=image_dim)
