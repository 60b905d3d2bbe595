"""Word embeddings trained from the catalog corpus, plus forward kernels.

The trainer fits an r x d embedding matrix by predicting each window's
center token from the average of its context tokens through a full
softmax over the vocabulary, with the logit parameters tied to the
embeddings themselves.  Sentence embeddings are (weighted) averages or
concatenations of word embeddings.  Scaled dot-product multi-head
attention and the residual block are provided as standalone forward
kernels.
"""

from __future__ import annotations

import string
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .errors import (
    DimensionError,
    EmptyVocabularyError,
    NoTrainingExamplesError,
    UndefinedSimilarityError,
    ValidationError,
)

UNK = "<unk>"

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token list with corpus frequencies; index 0 is the UNK token."""

    tokens: tuple[str, ...]
    frequencies: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(set(self.tokens)):
            raise ValidationError("duplicate tokens in vocabulary")
        if len(self.tokens) < 2:
            raise ValidationError("vocabulary needs at least 2 tokens")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        return self._lookup().get(token, 0)

    def _lookup(self) -> dict[str, int]:
        cached = getattr(self, "_lookup_cache", None)
        if cached is None:
            cached = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def encode(self, text: str) -> list[int]:
        lookup = self._lookup()
        return [lookup.get(tok, 0) for tok in tokenize(text)]


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count tokens over the corpus and keep those with frequency >= min_count.

    Dropped tokens map to the reserved UNK index at position 0.
    """
    counts: dict[str, int] = {}
    for text in corpus:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        ((tok, n) for tok, n in counts.items() if n >= min_count),
        key=lambda kv: (-kv[1], kv[0]),
    )
    if not kept:
        raise EmptyVocabularyError("no token meets the frequency threshold")
    dropped = sum(n for _, n in counts.items()) - sum(n for _, n in kept)
    tokens = (UNK,) + tuple(t for t, _ in kept)
    freqs = (max(dropped, 1),) + tuple(n for _, n in kept)
    return Vocabulary(tokens=tokens, frequencies=freqs)


@dataclass
class EmbeddingMatrix:
    """r x d matrix whose column j embeds token j of the dictionary."""

    values: np.ndarray  # (r, d)
    tokens: tuple[str, ...]
    frequencies: tuple[int, ...] | None = None
    loss_history: tuple[float, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError("embedding matrix must be 2-D (r, d)")
        if self.values.shape[1] != len(self.tokens):
            raise DimensionError(
                f"{self.values.shape[1]} columns for {len(self.tokens)} tokens"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite embedding entries")
        if self.values.flags.owndata:
            self.values.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.values.shape[1]

    def vector(self, token_or_index) -> np.ndarray:
        if isinstance(token_or_index, str):
            token_or_index = self.tokens.index(token_or_index)
        return self.values[:, token_or_index]


@dataclass(frozen=True)
class SentenceEmbedding:
    """Pooled text vector; the zero vector is allowed only for empty text."""

    vector: np.ndarray
    word_count: int

    @property
    def is_empty(self) -> bool:
        return self.word_count == 0


@dataclass(frozen=True)
class Word2VecConfig:
    dim: int = 32
    window: int = 4  # context tokens per window; even, half on each side
    epochs: int = 60
    learning_rate: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.window < 2 or self.window % 2 != 0:
            raise ValidationError("window must be an even integer >= 2")
        if self.dim < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ValidationError("bad embedding training configuration")


def _extract_windows(sequences: Sequence[Sequence[int]], window: int):
    half = window // 2
    ctx_rows, centers = [], []
    for seq in sequences:
        n = len(seq)
        for c in range(half, n - half):
            ctx_rows.append([*seq[c - half : c], *seq[c + 1 : c + half + 1]])
            centers.append(seq[c])
    if not centers:
        return None, None
    return (
        np.asarray(ctx_rows, dtype=np.int64),
        np.asarray(centers, dtype=np.int64),
    )


def train_word2vec(
    sequences: Sequence[Sequence[int]],
    vocab: Vocabulary,
    config: Word2VecConfig,
) -> EmbeddingMatrix:
    """Fit embeddings by full-batch gradient ascent on the window likelihood.

    ``sequences`` are token-index lists produced by ``Vocabulary.encode``.
    The per-epoch mean negative log-likelihood (evaluated before each
    step) is recorded on the returned matrix.
    """
    ctx, centers = _extract_windows(sequences, config.window)
    if ctx is None:
        raise NoTrainingExamplesError(
            f"no sequence is longer than the window ({config.window} + 1 tokens)"
        )
    d = vocab.size
    if int(ctx.max()) >= d or int(centers.max()) >= d:
        raise ValidationError("token index outside the vocabulary")
    n = centers.shape[0]
    rng = np.random.default_rng(config.seed)
    emb = (rng.random((d, config.dim)) - 0.5) * 0.2
    losses: list[float] = []
    lr = config.learning_rate
    prev_emb = prev_grad = None
    total, grad = _accel.cbow_loss_grad(emb, ctx, centers)
    for _ in range(config.epochs):
        cur = total / n
        # Backtrack when a step overshot: retry the last step with half
        # the rate until the loss stops increasing.
        halvings = 0
        while losses and not cur <= losses[-1] + 1e-12 and halvings < 40:
            lr *= 0.5
            halvings += 1
            emb = prev_emb - lr * prev_grad / n
            total, grad = _accel.cbow_loss_grad(emb, ctx, centers)
            cur = total / n
        losses.append(cur)
        prev_emb, prev_grad = emb, grad
        emb = emb - lr * grad / n
        total, grad = _accel.cbow_loss_grad(emb, ctx, centers)
    return EmbeddingMatrix(
        values=np.ascontiguousarray(emb.T),
        tokens=vocab.tokens,
        frequencies=vocab.frequencies,
        loss_history=tuple(losses),
    )


def word_probability(
    omega: EmbeddingMatrix, context: Sequence[int], target: int
) -> float:
    """Softmax probability of the target token given averaged context columns."""
    if len(context) == 0:
        raise ValidationError("empty context")
    d = omega.vocab_size
    idx = np.asarray(context, dtype=np.int64)
    if int(idx.max()) >= d or target >= d:
        raise ValidationError("token index outside the vocabulary")
    ubar = omega.values[:, idx].mean(axis=1)
    logits = omega.values.T @ ubar
    logits -= logits.max()
    expz = np.exp(logits)
    return float(expz[target] / expz.sum())


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector")
    return float(u @ v / (nu * nv))


def sentence_embedding(
    omega: EmbeddingMatrix,
    token_indices: Sequence[int],
    weighting: str = "uniform",
) -> SentenceEmbedding:
    """Average the word embeddings of a text.

    ``uniform`` weights every token equally; ``inverse_frequency`` weights
    token j proportionally to 1/frequency(j), normalised to mean 1 so the
    result stays an average.
    """
    idx = np.asarray(token_indices, dtype=np.int64)
    if idx.size == 0:
        return SentenceEmbedding(vector=np.zeros(omega.dim), word_count=0)
    cols = omega.values[:, idx]
    if weighting == "uniform":
        vec = cols.mean(axis=1)
    elif weighting == "inverse_frequency":
        if omega.frequencies is None:
            raise ValidationError("inverse_frequency weighting needs frequencies")
        freq = np.asarray(omega.frequencies, dtype=np.float64)[idx]
        lam = 1.0 / freq
        lam *= lam.size / lam.sum()
        vec = (cols * lam).mean(axis=1)
    else:
        raise ValidationError(f"unknown weighting {weighting!r}")
    return SentenceEmbedding(vector=vec, word_count=int(idx.size))


def concat_embedding(
    omega: EmbeddingMatrix, token_indices: Sequence[int], max_words: int
) -> np.ndarray:
    """First ``max_words`` token embeddings concatenated; zero-padded."""
    if max_words < 1:
        raise ValidationError("max_words must be >= 1")
    out = np.zeros(omega.dim * max_words)
    idx = np.asarray(token_indices, dtype=np.int64)[:max_words]
    for k, j in enumerate(idx):
        out[k * omega.dim : (k + 1) * omega.dim] = omega.values[:, j]
    return out


# ---------------------------------------------------------------------------
# Attention and residual-block forward kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionParams:
    """Per-head query/key/value projections plus the output mixing matrix."""

    proj_q: tuple[np.ndarray, ...]
    proj_k: tuple[np.ndarray, ...]
    proj_v: tuple[np.ndarray, ...]
    proj_o: np.ndarray
    key_dim: int

    def __post_init__(self):
        h = len(self.proj_q)
        if h < 1 or len(self.proj_k) != h or len(self.proj_v) != h:
            raise DimensionError("per-head projection lists must share a length >= 1")
        for mats in (self.proj_q, self.proj_k, self.proj_v, (self.proj_o,)):
            for m in mats:
                if not np.all(np.isfinite(m)):
                    raise ValidationError("non-finite attention parameters")
        dk = {m.shape[1] for m in self.proj_q} | {m.shape[1] for m in self.proj_k}
        if dk != {self.key_dim}:
            raise DimensionError(f"query/key projections must map to key_dim={self.key_dim}")
        value_total = sum(m.shape[1] for m in self.proj_v)
        if self.proj_o.shape[0] != value_total:
            raise DimensionError(
                f"output matrix expects {self.proj_o.shape[0]} rows, heads supply {value_total}"
            )

    @property
    def heads(self) -> int:
        return len(self.proj_q)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def attention_forward(params: AttentionParams, X: np.ndarray) -> np.ndarray:
    """Scaled dot-product multi-head attention on row-stacked inputs.

    Per head i the rows attend to each other through
    softmax(X Wq_i (X Wk_i)' / sqrt(key_dim)) X Wv_i; the heads are
    concatenated and mixed by the output matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionError("input must be a non-empty 2-D array of rows")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite attention input")
    outputs = []
    scale = 1.0 / np.sqrt(params.key_dim)
    for wq, wk, wv in zip(params.proj_q, params.proj_k, params.proj_v):
        if wq.shape[0] != X.shape[1]:
            raise DimensionError(
                f"projection expects input width {wq.shape[0]}, got {X.shape[1]}"
            )
        q, k, v = X @ wq, X @ wk, X @ wv
        weights = softmax_rows(q @ k.T * scale)
        outputs.append(weights @ v)
    return np.concatenate(outputs, axis=1) @ params.proj_o


_ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "linear": lambda z: z,
}


@dataclass(frozen=True)
class ResidualBlockParams:
    w0: np.ndarray
    w1: np.ndarray
    act0: str = "relu"
    act1: str = "relu"

    def __post_init__(self):
        for name in (self.act0, self.act1):
            if name not in _ACTIVATIONS:
                raise ValidationError(f"unknown activation {name!r}")
        if not (np.all(np.isfinite(self.w0)) and np.all(np.isfinite(self.w1))):
            raise ValidationError("non-finite residual block weights")


def residual_block_forward(params: ResidualBlockParams, v: np.ndarray) -> np.ndarray:
    """Skip connection plus a two-layer transform: v + act1(w1 act0(w0 v))."""
    v = np.asarray(v, dtype=np.float64)
    w0 = np.atleast_2d(np.asarray(params.w0, dtype=np.float64))
    w1 = np.atleast_2d(np.asarray(params.w1, dtype=np.float64))
    if w0.shape[1] != v.shape[0] or w1.shape[0] != v.shape[0] or w1.shape[1] != w0.shape[0]:
        raise DimensionError(
            f"residual shapes do not compose: v{v.shape}, w0{w0.shape}, w1{w1.shape}"
        )
    inner = _ACTIVATIONS[params.act0](w0 @ v)
    return v + _ACTIVATIONS[params.act1](w1 @ inner)


# ---------------------------------------------------------------------------
# Serialization: magic 'EMB1', u32 r, u32 d, column-major float64 values,
# then d length-prefixed UTF-8 token strings.
# ---------------------------------------------------------------------------

_EMB_MAGIC = b"EMB1"


def save_embeddings(matrix: EmbeddingMatrix, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        r, d = matrix.values.shape
        fh.write(struct.pack("<II", r, d))
        fh.write(np.asfortranarray(matrix.values).tobytes(order="F"))
        for tok in matrix.tokens:
            raw = tok.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_embeddings(path: str) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _EMB_MAGIC:
            raise ValidationError(f"{path}: not an embedding file")
        r, d = struct.unpack("<II", fh.read(8))
        raw = fh.read(8 * r * d)
        if len(raw) != 8 * r * d:
            raise ValidationError(f"{path}: truncated value block")
        values = np.frombuffer(raw, dtype="<f8").reshape((r, d), order="F").copy()
        tokens = []
        for _ in range(d):
            (n,) = struct.unpack("<I", fh.read(4))
            tokens.append(fh.read(n).decode("utf-8"))
    return EmbeddingMatrix(values=values, tokens=tuple(tokens))
