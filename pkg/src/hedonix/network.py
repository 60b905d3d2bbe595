"""Multi-task price network: shared trunk, one linear head per period.

The trunk maps a product's feature vector through 1-3 dense hidden
layers to a low-dimensional value embedding V; period t's price is the
strictly linear image heads[t] @ V.  Training minimises the quantity
weighted squared error over observed price cells, optionally plus an L1
penalty on the movement of predictions between adjacent periods, using
Adam with manually derived gradients.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _accel
from .errors import (
    DegenerateBatchError,
    DimensionError,
    ProductLookupError,
    SplitDegradedWarning,
    TrainingDivergedError,
    ValidationError,
)
from .features import FeatureMatrix
from .market import TransactionPanel

_ACTIVATIONS = ("relu", "sigmoid", "linear")


@dataclass(frozen=True)
class NetworkConfig:
    """Trunk and head geometry.

    ``layer_widths`` runs input -> hidden ... -> value dimension; the
    final entry is the value-embedding width p.  Between 1 and 3 hidden
    layers are allowed and p is capped at 512.
    """

    layer_widths: tuple[int, ...]
    periods: int
    activation: tuple[str, ...] | str = "relu"
    dropout_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        m = len(self.layer_widths) - 1
        if not 1 <= m <= 3:
            raise ValidationError(f"{m} hidden layers; expected between 1 and 3")
        if any(w < 1 for w in self.layer_widths):
            raise ValidationError("layer widths must be positive")
        if self.value_dim > 512:
            raise ValidationError(f"value dimension {self.value_dim} exceeds 512")
        if self.periods < 1:
            raise ValidationError("at least one period required")
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * m
        acts = tuple(acts)
        if len(acts) != m or any(a not in _ACTIVATIONS for a in acts):
            raise ValidationError(f"need {m} activations from {_ACTIVATIONS}")
        object.__setattr__(self, "activation", acts)
        if self.dropout_rate is not None and not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout rate must lie in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def value_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 1

    @staticmethod
    def desk_default(input_dim: int, periods: int) -> "NetworkConfig":
        return NetworkConfig((input_dim, 128, 64, 32), periods)

    @staticmethod
    def wide_preset(input_dim: int, periods: int) -> "NetworkConfig":
        return NetworkConfig((input_dim, 2048, 1024, 256), periods)


@dataclass
class NetworkParams:
    """Trunk weights/biases plus the (T, p) head matrix."""

    config: NetworkConfig
    weights: list[np.ndarray]  # (out, in) per hidden layer
    biases: list[np.ndarray]
    heads: np.ndarray  # (T, p)

    def tensors(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.append(self.heads)
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            heads=self.heads.copy(),
        )


def init_params(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    """Symmetric uniform initialisation scaled by 1/sqrt(fan-in)."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    widths = config.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    bound = 1.0 / np.sqrt(config.value_dim)
    heads = rng.uniform(-bound, bound, size=(config.periods, config.value_dim))
    return NetworkParams(config=config, weights=weights, biases=biases, heads=heads)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def forward(
    params: NetworkParams,
    x: np.ndarray,
    *,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Value embeddings and per-period prices for a batch (or one vector).

    Dropout only fires when a generator is passed, i.e. during training;
    inference is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    A = x[None, :] if single else x
    if A.shape[1] != params.config.input_dim:
        raise DimensionError(
            f"input width {A.shape[1]} != configured {params.config.input_dim}"
        )
    if not np.all(np.isfinite(A)):
        raise ValidationError("non-finite network input")
    rate = params.config.dropout_rate
    for w, b, act in zip(params.weights, params.biases, params.config.activation):
        A = _act(act, A @ w.T + b)
        if dropout_rng is not None and rate:
            keep = dropout_rng.random(A.shape) >= rate
            A = A * keep / (1.0 - rate)
    H = A @ params.heads.T
    if single:
        return A[0], H[0]
    return A, H


def predict_matrix(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    """(n, T) price predictions with dropout disabled."""
    _, H = forward(params, np.atleast_2d(X))
    return H


@dataclass(frozen=True)
class TrainingBatch:
    """Features with the matching observed-price grid.

    ``mask`` marks cells carrying an observed price; masked-out cells
    contribute nothing to the loss or its gradient.
    """

    X: np.ndarray  # (n, input_dim)
    prices: np.ndarray  # (n, T), undefined where mask is False
    quantities: np.ndarray  # (n, T)
    mask: np.ndarray  # (n, T) bool

    def __post_init__(self):
        n = self.X.shape[0]
        for name in ("prices", "quantities", "mask"):
            arr = getattr(self, name)
            if arr.shape[0] != n or arr.ndim != 2:
                raise DimensionError(f"{name} must be (n, T)")

    def select(self, rows: np.ndarray) -> "TrainingBatch":
        return TrainingBatch(
            self.X[rows], self.prices[rows], self.quantities[rows], self.mask[rows]
        )


def loss(params: NetworkParams, batch: TrainingBatch, smoothness: float = 0.0) -> float:
    value, _ = loss_and_grads(params, batch, smoothness)
    return value


def loss_and_grads(
    params: NetworkParams,
    batch: TrainingBatch,
    smoothness: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Loss plus gradients for every tensor, via manual backpropagation."""
    if not batch.mask.any():
        raise DegenerateBatchError("no observed price cells in batch")
    X = np.asarray(batch.X, dtype=np.float64)
    P = np.where(batch.mask, batch.prices, 0.0)
    Q = np.asarray(batch.quantities, dtype=np.float64)
    M = np.ascontiguousarray(batch.mask, dtype=np.bool_)

    cfg = params.config
    rate = cfg.dropout_rate
    A = X
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = [A]
    drop_masks: list[np.ndarray | None] = []
    for w, b, act in zip(params.weights, params.biases, cfg.activation):
        Z = A @ w.T + b
        A = _act(act, Z)
        if dropout_rng is not None and rate:
            keep = (dropout_rng.random(A.shape) >= rate) / (1.0 - rate)
            A = A * keep
            drop_masks.append(keep)
        else:
            drop_masks.append(None)
        pre.append(Z)
        post.append(A)
    V = A
    H = np.ascontiguousarray(V @ params.heads.T)

    total, dH = _accel.price_loss_grad(H, np.ascontiguousarray(P), np.ascontiguousarray(Q), M, float(smoothness))
    if not np.isfinite(total):
        raise TrainingDivergedError("non-finite loss")

    d_heads = dH.T @ V
    dA = dH @ params.heads
    grads_rev: list[np.ndarray] = [d_heads]
    for layer in range(cfg.n_hidden - 1, -1, -1):
        if drop_masks[layer] is not None:
            dA = dA * drop_masks[layer]
        dZ = dA * _act_grad(cfg.activation[layer], pre[layer], post[layer + 1])
        grads_rev.append(dZ.sum(axis=0))  # bias
        grads_rev.append(dZ.T @ post[layer])  # weight
        dA = dZ @ params.weights[layer]
    grads = list(reversed(grads_rev))
    return float(total), grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 128
    smoothness: float = 0.0
    price_transform: str = "identity"  # or "log"
    include_zero_prices: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        if not np.isfinite(self.smoothness) or self.smoothness < 0:
            raise ValidationError("smoothness penalty must be finite and >= 0")
        if self.price_transform not in ("identity", "log"):
            raise ValidationError(f"unknown price transform {self.price_transform!r}")


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @staticmethod
    def init(tensors: Sequence[np.ndarray]) -> "AdamState":
        return AdamState(
            step=0,
            m=[np.zeros_like(t) for t in tensors],
            v=[np.zeros_like(t) for t in tensors],
        )


def adam_step(
    state: AdamState,
    tensors: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    config: TrainingConfig,
) -> AdamState:
    """One bias-corrected Adam update, applied to the tensors in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for tensor, g, m, v in zip(tensors, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        tensor -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataSplit:
    """Disjoint product sets stratified by first-transaction month."""

    train: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]
    seed: int = 0
    stratify_by: str = "first_transaction_month"

    def __post_init__(self):
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise ValidationError("split subsets overlap")


def split_stratified(
    panel: TransactionPanel,
    fractions: tuple[float, float, float],
    seed: int = 0,
) -> DataSplit:
    """Assign products to train/validation/test within first-month strata.

    Counts per stratum follow largest-remainder rounding so each subset
    stays within one product of its proportional share.  Strata smaller
    than the number of populated subsets trigger a fallback to a single
    global stratum, with a warning.
    """
    fracs = np.asarray(fractions, dtype=np.float64)
    if fracs.size != 3 or np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise ValidationError("fractions must be three non-negatives summing to 1")
    products = sorted(panel.products_with_sales())
    if not products:
        raise ValidationError("no products with sales to split")

    strata: dict[int, list[str]] = {}
    for pid in products:
        strata.setdefault(panel.first_transaction_period(pid), []).append(pid)

    n_buckets = int(np.count_nonzero(fracs > 0))
    if min(len(v) for v in strata.values()) < n_buckets:
        warnings.warn(
            "a stratum has fewer products than populated subsets; "
            "falling back to global assignment",
            SplitDegradedWarning,
        )
        strata = {0: products}

    rng = np.random.default_rng(seed)
    buckets: list[list[str]] = [[], [], []]
    for key in sorted(strata):
        members = strata[key]
        order = rng.permutation(len(members))
        counts = _largest_remainder(len(members), fracs)
        start = 0
        for b, c in enumerate(counts):
            for j in order[start : start + c]:
                buckets[b].append(members[j])
            start += c
    return DataSplit(
        train=frozenset(buckets[0]),
        validation=frozenset(buckets[1]),
        test=frozenset(buckets[2]),
        seed=seed,
    )


def _largest_remainder(n: int, fracs: np.ndarray) -> list[int]:
    raw = fracs * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for k in range(n - counts.sum()):
        counts[order[k % len(counts)]] += 1
    return counts.tolist()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_r2: float


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[EpochStats]
    best_epoch: int


def build_training_batch(
    panel: TransactionPanel,
    features: FeatureMatrix,
    products: Sequence[str],
    transform: str = "identity",
    include_zero_prices: bool = False,
) -> TrainingBatch:
    """Assemble the (n, T) price/quantity/mask grid for a product subset."""
    products = sorted(products)
    rows = [panel.product_index(p) for p in products]
    prices = panel.price_matrix()[rows]
    qty = panel.quantity_matrix()[rows]
    mask = panel.transacted_mask()[rows]
    if not include_zero_prices or transform == "log":
        mask = mask & (prices > 0.0) & np.isfinite(prices)
    else:
        mask = mask & np.isfinite(prices)
    prices = np.where(mask, prices, np.nan)
    if transform == "log":
        prices = np.where(mask, np.log(np.where(mask, prices, 1.0)), np.nan)
    return TrainingBatch(
        X=features.subset(products),
        prices=np.ascontiguousarray(np.where(mask, prices, 0.0)),
        quantities=np.ascontiguousarray(qty),
        mask=np.ascontiguousarray(mask),
    )


def train(
    panel: TransactionPanel,
    features: FeatureMatrix,
    split: DataSplit,
    net_config: NetworkConfig,
    train_config: TrainingConfig,
) -> TrainResult:
    """Minibatch Adam over the training split; keeps the best-validation epoch.

    Per-epoch train/validation losses are normalised by the number of
    observed cells so curves are comparable across splits.
    """
    tb = build_training_batch(
        panel, features, sorted(split.train),
        train_config.price_transform, train_config.include_zero_prices,
    )
    vb = None
    if split.validation:
        vb = build_training_batch(
            panel, features, sorted(split.validation),
            train_config.price_transform, train_config.include_zero_prices,
        )
        if not vb.mask.any():
            vb = None
    params = init_params(net_config, seed=train_config.seed)
    state = AdamState.init(params.tensors())
    rng = np.random.default_rng(train_config.seed)
    n = tb.X.shape[0]
    lam = train_config.smoothness
    n_train_cells = int(tb.mask.sum())

    history: list[EpochStats] = []
    best_loss = np.inf
    best_epoch = -1
    best = params.copy()
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, train_config.batch_size):
            rows = order[lo : lo + train_config.batch_size]
            sub = tb.select(rows)
            if not sub.mask.any():
                continue
            try:
                _, grads = loss_and_grads(
                    params, sub, lam,
                    dropout_rng=rng if net_config.dropout_rate else None,
                )
                adam_step(state, params.tensors(), grads, train_config)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(str(e), epoch=epoch) from None

        train_loss = loss(params, tb, lam) / n_train_cells
        if not np.isfinite(train_loss):
            raise TrainingDivergedError("non-finite training loss", epoch=epoch)
        val_loss = float("nan")
        val_r2 = float("nan")
        monitor = train_loss
        if vb is not None:
            val_loss = loss(params, vb, lam) / max(int(vb.mask.sum()), 1)
            _, hv = forward(params, vb.X)
            val_r2 = r_squared(hv, vb.prices, vb.mask, vb.quantities).pooled
            monitor = val_loss
        history.append(EpochStats(epoch, train_loss, val_loss, val_r2))
        if monitor < best_loss:
            best_loss = monitor
            best_epoch = epoch
            best = params.copy()
    for tensor in best.tensors():
        tensor.setflags(write=False)
    return TrainResult(params=best, history=history, best_epoch=best_epoch)


def refit_heads(
    params: NetworkParams,
    features: FeatureMatrix,
    panel: TransactionPanel,
    products: Sequence[str],
    transform: str = "identity",
) -> NetworkParams:
    """Replace each period head with its least-squares fit on frozen V.

    Gradient training leaves the heads near, not at, the per-period
    optimum; refitting them in closed form removes that residual while
    the trunk stays untouched.  Periods without enough observations keep
    their trained head.
    """
    batch = build_training_batch(panel, features, sorted(products), transform)
    V, _ = forward(params, batch.X)
    out = params.copy()
    p = V.shape[1]
    for t in range(params.config.periods):
        sel = batch.mask[:, t]
        if int(sel.sum()) <= p:
            continue
        theta, *_ = np.linalg.lstsq(V[sel], batch.prices[sel, t], rcond=None)
        out.heads[t] = theta
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RSquared:
    per_period: np.ndarray  # NaN where a period has no variance
    pooled: float


def r_squared(
    predicted: np.ndarray,
    actual: np.ndarray,
    mask: np.ndarray,
    quantities: np.ndarray | None = None,
) -> RSquared:
    """Per-period 1 - SSR/SST over observed cells, plus a pooled version.

    The pooled statistic weights cells by quantity when quantities are
    given; a period with fewer than two observations or zero variance
    gets NaN rather than a number.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    T = actual.shape[1]
    out = np.full(T, np.nan)
    for t in range(T):
        sel = mask[:, t]
        if sel.sum() < 2:
            continue
        y = actual[sel, t]
        ssr = float(np.sum((y - predicted[sel, t]) ** 2))
        sst = float(np.sum((y - y.mean()) ** 2))
        if sst > 0:
            out[t] = 1.0 - ssr / sst
    w = np.ones_like(actual) if quantities is None else np.asarray(quantities, dtype=np.float64)
    w = np.where(mask, w, 0.0)
    total_w = w.sum()
    pooled = float("nan")
    if total_w > 0:
        ybar = float((w * np.where(mask, actual, 0.0)).sum() / total_w)
        ssr = float((w * np.where(mask, actual - predicted, 0.0) ** 2).sum())
        sst = float((w * np.where(mask, actual - ybar, 0.0) ** 2).sum())
        if sst > 0:
            pooled = 1.0 - ssr / sst
    return RSquared(per_period=out, pooled=pooled)


# ---------------------------------------------------------------------------
# Value embeddings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueEmbeddingTable:
    """Frozen last-hidden-layer vectors, one row per product.

    ``conditioning`` records the products whose prices influenced the
    trunk (train plus validation); hold-out inference must not reuse
    them.
    """

    product_ids: tuple[str, ...]
    values: np.ndarray  # (n, p)
    conditioning: frozenset[str]

    def __post_init__(self):
        self.values.setflags(write=False)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.product_ids)})

    def row(self, product_id: str) -> np.ndarray:
        idx = self._index.get(product_id)
        if idx is None:
            raise ProductLookupError(product_id)
        return self.values[idx]

    def subset(self, product_ids: Sequence[str]) -> np.ndarray:
        return np.vstack([self.row(p) for p in product_ids])


def extract_value_embeddings(
    params: NetworkParams,
    features: FeatureMatrix,
    products: Sequence[str],
    conditioning: frozenset[str] = frozenset(),
) -> ValueEmbeddingTable:
    """Evaluate the trunk (dropout off) for the requested products."""
    products = tuple(products)
    V, _ = forward(params, features.subset(products))
    return ValueEmbeddingTable(
        product_ids=products,
        values=np.ascontiguousarray(V),
        conditioning=frozenset(conditioning),
    )


# ---------------------------------------------------------------------------
# Checkpoints: magic 'HNET', u32 version, canonical-JSON config, shape
# manifest, tensors as little-endian float64.
# ---------------------------------------------------------------------------

_HNET_MAGIC = b"HNET"
_HNET_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(params: NetworkParams, path: str) -> None:
    cfg = params.config
    config_doc = {
        "layer_widths": list(cfg.layer_widths),
        "periods": cfg.periods,
        "activation": list(cfg.activation),
        "dropout_rate": cfg.dropout_rate,
    }
    tensors = params.tensors()
    manifest = [{"name": f"tensor{i}", "shape": list(t.shape)} for i, t in enumerate(tensors)]
    with open(path, "wb") as fh:
        fh.write(_HNET_MAGIC)
        fh.write(struct.pack("<I", _HNET_VERSION))
        for doc in (config_doc, manifest):
            blob = _canonical_json(doc)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> NetworkParams:
    with open(path, "rb") as fh:
        if fh.read(4) != _HNET_MAGIC:
            raise ValidationError(f"{path}: not a network checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _HNET_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        docs = []
        for _ in range(2):
            (n,) = struct.unpack("<I", fh.read(4))
            docs.append(json.loads(fh.read(n).decode("utf-8")))
        config_doc, manifest = docs
        config = NetworkConfig(
            layer_widths=tuple(config_doc["layer_widths"]),
            periods=config_doc["periods"],
            activation=tuple(config_doc["activation"]),
            dropout_rate=config_doc["dropout_rate"],
        )
        tensors = []
        for entry in manifest:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValidationError(f"{path}: truncated tensor block")
            tensors.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    weights = tensors[0:-1:2]
    biases = tensors[1:-1:2]
    return NetworkParams(config=config, weights=weights, biases=biases, heads=tensors[-1])
