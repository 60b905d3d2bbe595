"""Synthetic transaction panels with a known hedonic ground truth.

Products carry discrete latent attributes (category, material, quality
tier, ...).  Each attribute bucket owns a small set of synonym words;
titles and descriptions are built from those words, so a text model can
recover the attributes.  The true hedonic price is a per-period scaling
of a bucket-value sum (optionally with an interaction term), observed
prices add configurable noise, and quantities follow log-normal demand
that falls with the transacted price.  Entry and exit are driven by a
target turnover rate.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FeasibilityWarning, ValidationError
from .indices import HedonicSurface, bilateral_hedonic, bilateral_matched, chain
from .market import ProductCatalogEntry, TransactionPanel

_CATEGORY_WORDS = (
    ("dress", "gown", "frock"),
    ("shirt", "blouse", "top"),
    ("jacket", "coat", "parka"),
    ("trousers", "pants", "slacks"),
    ("skirt", "kilt", "sarong"),
    ("sweater", "jumper", "pullover"),
)
_MATERIAL_WORDS = (
    ("cotton", "canvas", "muslin"),
    ("silk", "satin", "chiffon"),
    ("wool", "tweed", "cashmere"),
    ("leather", "suede", "hide"),
    ("linen", "flax", "hemp"),
    ("denim", "jean", "chambray"),
)
_QUALITY_WORDS = (
    ("basic", "plain", "simple"),
    ("classic", "standard", "regular"),
    ("premium", "fine", "refined"),
    ("luxury", "deluxe", "exquisite"),
    ("designer", "couture", "bespoke"),
    ("artisan", "handmade", "crafted"),
)
_CURATED = (_CATEGORY_WORDS, _MATERIAL_WORDS, _QUALITY_WORDS)
_FILLERS = ("the", "with", "style", "fit", "for", "everyday", "wear", "new")

_VALUE_RANGES = ((10.0, 60.0), (5.0, 40.0), (0.0, 50.0))


@dataclass(frozen=True)
class MarketSpec:
    """Knobs of the synthetic market; fully determined by the seed."""

    n_products: int
    n_periods: int
    seed: int = 0
    truth: str = "linear"  # or "nonlinear"
    inflation: float | tuple[float, ...] = 1.0  # gross rate per month step
    turnover: float = 0.2
    active_fraction: float = 0.6
    price_noise_sd: float = 0.0
    noise_model: str = "additive"  # or "multiplicative"
    quantity_elasticity: float = 1.5
    quantity_stockup: float = 0.0
    quantity_noise_sd: float = 0.3
    base_quantity: float = 20.0
    buckets_per_attribute: tuple[int, ...] = (4, 4, 4)
    synonyms_per_bucket: int = 2
    description_sentences: int = 3
    image_dim: int = 8
    image_noise_sd: float = 0.1
    interaction_strength: float = 30.0

    def __post_init__(self):
        if self.n_products < 2 or self.n_periods < 1:
            raise ValidationError("need at least 2 products and 1 period")
        if not 0.0 <= self.turnover < 1.0:
            raise ValidationError("turnover must lie in [0, 1)")
        if not 0.0 < self.active_fraction <= 1.0:
            raise ValidationError("active fraction must lie in (0, 1]")
        if self.price_noise_sd < 0 or self.quantity_noise_sd < 0:
            raise ValidationError("noise levels must be >= 0")
        if self.truth not in ("linear", "nonlinear"):
            raise ValidationError(f"unknown truth kind {self.truth!r}")
        if self.noise_model not in ("additive", "multiplicative"):
            raise ValidationError(f"unknown noise model {self.noise_model!r}")
        steps = self.step_rates()
        if np.any(steps <= 0):
            raise ValidationError("inflation rates must be positive")
        object.__setattr__(
            self, "buckets_per_attribute", tuple(int(b) for b in self.buckets_per_attribute)
        )
        if any(b < 1 for b in self.buckets_per_attribute):
            raise ValidationError("each attribute needs at least one bucket")
        if self.synonyms_per_bucket < 1:
            raise ValidationError("at least one synonym per bucket")

    def step_rates(self) -> np.ndarray:
        """Gross month-over-month rates, one per step (length T - 1)."""
        if isinstance(self.inflation, (int, float)):
            return np.full(max(self.n_periods - 1, 0), float(self.inflation))
        rates = np.asarray(self.inflation, dtype=np.float64)
        if rates.size != self.n_periods - 1:
            raise ValidationError(
                f"inflation path needs {self.n_periods - 1} steps, got {rates.size}"
            )
        return rates

    def level_path(self) -> np.ndarray:
        return np.concatenate([[1.0], np.cumprod(self.step_rates())])

    def is_stationary(self) -> bool:
        return bool(np.all(self.step_rates() == 1.0))

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        if isinstance(doc["inflation"], tuple):
            doc["inflation"] = list(doc["inflation"])
        doc["buckets_per_attribute"] = list(doc["buckets_per_attribute"])
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "MarketSpec":
        doc = json.loads(text)
        if isinstance(doc.get("inflation"), list):
            doc["inflation"] = tuple(doc["inflation"])
        if isinstance(doc.get("buckets_per_attribute"), list):
            doc["buckets_per_attribute"] = tuple(doc["buckets_per_attribute"])
        return MarketSpec(**doc)


def _bucket_word(attr: int, bucket: int, synonym: int) -> str:
    if attr < len(_CURATED):
        family = _CURATED[attr]
        if bucket < len(family) and synonym < len(family[bucket]):
            return family[bucket][synonym]
    return f"attr{attr}kind{bucket}word{synonym}"


@dataclass
class GeneratedPanel:
    """A generated market: panel, catalog, and the exact ground truth."""

    spec: MarketSpec
    panel: TransactionPanel
    catalog: list[ProductCatalogEntry]
    product_ids: tuple[str, ...]
    attributes: np.ndarray  # (n, n_attributes) bucket indices
    base_values: np.ndarray  # (n,)
    truth_prices: np.ndarray  # (n, T), covers every product and period
    level_path: np.ndarray  # (T,)
    feasibility: tuple[str, ...] = ()

    def true_surface(self) -> HedonicSurface:
        return HedonicSurface(self.product_ids, self.truth_prices)

    def bucket_words(self) -> dict[tuple[int, int], tuple[str, ...]]:
        """Synonym words keyed by (attribute, bucket)."""
        out = {}
        for a, n_buckets in enumerate(self.spec.buckets_per_attribute):
            for b in range(n_buckets):
                out[(a, b)] = tuple(
                    _bucket_word(a, b, s) for s in range(self.spec.synonyms_per_bucket)
                )
        return out


def generate_panel(spec: MarketSpec) -> GeneratedPanel:
    """Draw a full synthetic market, deterministic under the spec seed."""
    streams = np.random.SeedSequence(spec.seed).spawn(6)
    value_rng, attr_rng, activity_rng, price_rng, qty_rng, text_rng = (
        np.random.default_rng(s) for s in streams
    )
    n, T = spec.n_products, spec.n_periods
    n_attr = len(spec.buckets_per_attribute)
    width = int(np.ceil(np.log10(max(n, 2))))
    product_ids = tuple(f"P{i:0{width}d}" for i in range(n))

    # Bucket values and the base price each product would fetch at level 1.
    values = []
    for a, n_buckets in enumerate(spec.buckets_per_attribute):
        lo, hi = _VALUE_RANGES[a] if a < len(_VALUE_RANGES) else (0.0, 30.0)
        values.append(value_rng.uniform(lo, hi, size=n_buckets))
    inter0 = value_rng.uniform(0.0, 1.0, size=spec.buckets_per_attribute[0])
    inter1 = (
        value_rng.uniform(0.0, 1.0, size=spec.buckets_per_attribute[1])
        if n_attr > 1
        else np.ones(1)
    )

    attributes = np.column_stack(
        [attr_rng.integers(0, b, size=n) for b in spec.buckets_per_attribute]
    )
    base = np.full(n, 20.0)
    for a in range(n_attr):
        base += values[a][attributes[:, a]]
    if spec.truth == "nonlinear":
        second = attributes[:, 1] if n_attr > 1 else np.zeros(n, dtype=int)
        base += spec.interaction_strength * inter0[attributes[:, 0]] * inter1[second]

    level = spec.level_path()
    truth = base[:, None] * level[None, :]

    # Activity: a fixed-size active set where the configured share of each
    # period's members entered from dormancy.
    n_active = min(max(int(round(spec.active_fraction * n)), 2), n)
    feasibility: list[str] = []
    all_idx = np.arange(n)
    active = np.sort(activity_rng.choice(all_idx, size=n_active, replace=False))
    active_mask = np.zeros((n, T), dtype=bool)
    active_mask[active, 0] = True
    for t in range(1, T):
        entrants_target = int(round(spec.turnover * n_active))
        dormant = np.setdiff1d(all_idx, active, assume_unique=False)
        entrants_n = min(entrants_target, dormant.size)
        if entrants_n < entrants_target:
            feasibility.append(
                f"period {t}: only {entrants_n} dormant products for "
                f"{entrants_target} requested entrants"
            )
        survivors_n = n_active - entrants_n
        survivors = np.sort(activity_rng.choice(active, size=survivors_n, replace=False))
        entrants = (
            np.sort(activity_rng.choice(dormant, size=entrants_n, replace=False))
            if entrants_n
            else np.empty(0, dtype=int)
        )
        active = np.sort(np.concatenate([survivors, entrants]))
        active_mask[active, t] = True
    if feasibility:
        warnings.warn(
            "turnover target not always feasible: " + "; ".join(feasibility[:3]),
            FeasibilityWarning,
        )

    # Observed prices and demand-driven quantities on active cells.
    z_price = price_rng.standard_normal((n, T))
    if spec.noise_model == "additive":
        prices = truth + spec.price_noise_sd * z_price
        prices = np.maximum(prices, 0.05 * truth)
    else:
        sd = spec.price_noise_sd
        prices = truth * np.exp(sd * z_price - 0.5 * sd * sd)
    z_qty = qty_rng.standard_normal((n, T))
    sd_q = spec.quantity_noise_sd
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(truth > 0, prices / truth, 1.0)
    demand = spec.base_quantity * rel ** (-spec.quantity_elasticity)
    if spec.quantity_stockup:
        # A discount last month depresses demand this month (stock-up),
        # which is what makes frequently chained indices drift.
        demand[:, 1:] *= rel[:, :-1] ** spec.quantity_stockup
    quantities = np.maximum(np.round(demand * np.exp(sd_q * z_qty - 0.5 * sd_q * sd_q)), 1.0)

    rows = []
    for i, t in np.argwhere(active_mask):
        q = float(quantities[i, t])
        rows.append((product_ids[i], int(t), float(prices[i, t]) * q, q))
    panel = TransactionPanel(rows)

    catalog = _build_catalog(spec, product_ids, attributes, text_rng)
    return GeneratedPanel(
        spec=spec,
        panel=panel,
        catalog=catalog,
        product_ids=product_ids,
        attributes=attributes,
        base_values=base,
        truth_prices=truth,
        level_path=level,
        feasibility=tuple(feasibility),
    )


def _build_catalog(
    spec: MarketSpec,
    product_ids: tuple[str, ...],
    attributes: np.ndarray,
    rng: np.random.Generator,
) -> list[ProductCatalogEntry]:
    n_attr = len(spec.buckets_per_attribute)
    syn = spec.synonyms_per_bucket

    def word(i: int, attr: int) -> str:
        return _bucket_word(attr, int(attributes[i, attr]), int(rng.integers(0, syn)))

    img_matrix = None
    if spec.image_dim:
        dim_x = sum(spec.buckets_per_attribute)
        img_matrix = rng.standard_normal((spec.image_dim, dim_x)) / np.sqrt(dim_x)
        offsets = np.concatenate([[0], np.cumsum(spec.buckets_per_attribute)[:-1]])

    entries = []
    for i, pid in enumerate(product_ids):
        attr_words = [word(i, a) for a in range(min(n_attr, 3))][::-1]
        title = " ".join(attr_words)
        sentences = []
        for _ in range(spec.description_sentences):
            parts = [str(rng.choice(_FILLERS))]
            for a in range(n_attr):
                parts.append(word(i, a))
            parts.append(str(rng.choice(_FILLERS)))
            sentences.append(" ".join(parts))
        bullets = (
            f"{word(i, min(1, n_attr - 1))} {word(i, 0)}",
            f"{word(i, n_attr - 1)} {rng.choice(_FILLERS)}",
        )
        image = None
        if img_matrix is not None:
            x = np.zeros(img_matrix.shape[1])
            for a in range(n_attr):
                x[offsets[a] + attributes[i, a]] = 1.0
            image = img_matrix @ x + spec.image_noise_sd * rng.standard_normal(spec.image_dim)
        entries.append(
            ProductCatalogEntry(
                product_id=pid,
                title=title,
                description=" ".join(sentences),
                bullet_points=bullets,
                image_features=image,
            )
        )
    return entries


def true_index(gen: GeneratedPanel, t: int, lag: int, kind: str = "F") -> float:
    """Index the true hedonic surface the same way the estimator would."""
    return bilateral_hedonic(gen.true_surface(), gen.panel, t, lag, kind)


# ---------------------------------------------------------------------------
# Chain-drift experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftStats:
    """Absolute log drift of chained matched indices per replication."""

    horizon: int
    fine_lag: int
    coarse_lag: int
    fine_drift: np.ndarray
    coarse_drift: np.ndarray

    @property
    def replications(self) -> int:
        return self.fine_drift.shape[0]

    @property
    def mean_fine(self) -> float:
        return float(self.fine_drift.mean())

    @property
    def mean_coarse(self) -> float:
        return float(self.coarse_drift.mean())

    @property
    def frac_fine_exceeds(self) -> float:
        return float(np.mean(self.fine_drift > self.coarse_drift))


def _replication_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def drift_experiment(
    spec: MarketSpec,
    replications: int,
    lags: tuple[int, int] = (1, 12),
    horizon: int | None = None,
) -> DriftStats:
    """Compare chained matched-Fisher drift at a fine and a coarse lag.

    The market must be stationary (all step rates 1), so any departure
    of a chained level from 1 is pure drift; without price noise both
    drifts are exactly zero.
    """
    if not spec.is_stationary():
        raise ValidationError("drift experiment needs a stationary truth")
    fine, coarse = lags
    if horizon is None:
        horizon = ((spec.n_periods - 1) // coarse) * coarse
    if horizon <= 0 or horizon % fine or horizon % coarse:
        raise ValidationError(f"horizon {horizon} must be a positive multiple of both lags")
    if horizon > spec.n_periods - 1:
        raise ValidationError(f"horizon {horizon} exceeds the panel length")

    fine_drift = np.empty(replications)
    coarse_drift = np.empty(replications)
    for rep in range(replications):
        gen = generate_panel(
            dataclasses.replace(spec, seed=_replication_seed(spec.seed, rep))
        )

        def fisher(t: int, lag: int) -> float:
            return bilateral_matched(gen.panel, t, lag, "F")

        fine_series = chain(fisher, 0, fine, horizon // fine, kind="matched_F")
        coarse_series = chain(fisher, 0, coarse, horizon // coarse, kind="matched_F")
        fine_drift[rep] = abs(np.log(fine_series.level(horizon)))
        coarse_drift[rep] = abs(np.log(coarse_series.level(horizon)))
    return DriftStats(
        horizon=horizon,
        fine_lag=fine,
        coarse_lag=coarse,
        fine_drift=fine_drift,
        coarse_drift=coarse_drift,
    )
