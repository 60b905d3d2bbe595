"""Bilateral and chained price indices: matched, hedonic, and Jevons.

Matched indices compare only products transacting in both periods.
Hedonic indices price a full period universe with model prices, so
entering and exiting products still contribute.  Every bilateral
compares a current period t against t - lag; chained series compound
bilaterals along the grid base, base + lag, base + 2 lag, ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    ChainError,
    CoverageError,
    DegenerateBasketError,
    HedonixError,
    NoOverlapError,
    ValidationError,
)
from .market import TransactionPanel

KINDS = ("L", "P", "F")

SERIES_KINDS = (
    "matched_L", "matched_P", "matched_F",
    "hedonic_L", "hedonic_P", "hedonic_F",
    "jevons", "combined",
)


class HedonicSurface:
    """Model prices H[i, t] for every product and period.

    NaN cells count as missing and trigger a coverage error when a
    basket needs them; nothing silently falls back to transaction
    prices.
    """

    def __init__(self, product_ids: Sequence[str], values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape[0] != len(product_ids):
            raise ValidationError("one surface row per product required")
        values.setflags(write=False)
        self.product_ids = tuple(product_ids)
        self.values = values
        self._index = {pid: i for i, pid in enumerate(self.product_ids)}

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    def lookup(self, product_ids: Sequence[str], t: int) -> np.ndarray:
        """Prices at period t, NaN for unknown products."""
        out = np.full(len(product_ids), np.nan)
        for k, pid in enumerate(product_ids):
            i = self._index.get(pid)
            if i is not None:
                out[k] = self.values[i, t]
        return out


@dataclass(frozen=True)
class PricedBasket:
    """One side of a bilateral comparison: member prices and weights.

    Prices come from either transactions or a hedonic surface; the
    quantities may belong to a different period than the prices (that is
    the whole point of base- vs current-weighted indices).
    """

    period: int
    product_ids: tuple[str, ...]
    prices: np.ndarray
    quantities: np.ndarray
    source: str  # "transacted" or "hedonic"

    def __post_init__(self):
        if not (len(self.product_ids) == self.prices.shape[0] == self.quantities.shape[0]):
            raise ValidationError("basket members, prices, and quantities must align")
        bad = [p for p, v in zip(self.product_ids, self.prices) if not v > 0]
        if bad:
            raise ValidationError(
                f"nonpositive {self.source} prices at period {self.period} for {bad[:10]}"
            )
        if np.any(self.quantities < 0):
            raise ValidationError("negative basket quantities")

    def value(self) -> float:
        """Cost of buying the weight quantities at the basket prices."""
        return float(self.prices @ self.quantities)


def _quantities(panel: TransactionPanel, members: Sequence[str], t: int) -> np.ndarray:
    rows = [panel.product_index(p) for p in members]
    return panel.quantity_matrix()[rows, t]


def _transacted_basket(
    panel: TransactionPanel, members: Sequence[str], price_period: int, weight_period: int
) -> PricedBasket:
    rows = [panel.product_index(p) for p in members]
    return PricedBasket(
        period=price_period,
        product_ids=tuple(members),
        prices=panel.price_matrix()[rows, price_period],
        quantities=_quantities(panel, members, weight_period),
        source="transacted",
    )


def _hedonic_basket(
    surface: "HedonicSurface",
    panel: TransactionPanel,
    members: Sequence[str],
    price_period: int,
    weight_period: int,
) -> PricedBasket:
    prices = surface.lookup(members, price_period)
    missing = [m for m, v in zip(members, prices) if not np.isfinite(v)]
    if missing:
        raise CoverageError(
            f"hedonic prices missing at period {price_period} for "
            f"{len(missing)} basket members, e.g. {missing[:10]}",
            missing=missing,
        )
    return PricedBasket(
        period=price_period,
        product_ids=tuple(members),
        prices=prices,
        quantities=_quantities(panel, members, weight_period),
        source="hedonic",
    )


def _ratio(numerator: PricedBasket, denominator: PricedBasket) -> float:
    value = denominator.value()
    if value <= 0:
        raise DegenerateBasketError(
            f"{denominator.source} basket at period {denominator.period} sums to {value}"
        )
    return numerator.value() / value


def matched_ratio(
    panel: TransactionPanel, t_cur: int, t_base: int, kind: str = "F"
) -> float:
    """Bilateral matched index between two explicit periods.

    L weights by base-period quantities over the match set, P by
    current-period quantities, F is the geometric mean of the two.
    """
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}")
    members = sorted(panel.transacting(t_cur) & panel.transacting(t_base))
    if not members:
        raise NoOverlapError(f"no products transact in both {t_cur} and {t_base}")
    if kind == "F":
        return math.sqrt(
            matched_ratio(panel, t_cur, t_base, "L")
            * matched_ratio(panel, t_cur, t_base, "P")
        )
    weight_period = t_base if kind == "L" else t_cur
    return _ratio(
        _transacted_basket(panel, members, t_cur, weight_period),
        _transacted_basket(panel, members, t_base, weight_period),
    )


def bilateral_matched(
    panel: TransactionPanel, t: int, lag: int, kind: str = "F"
) -> float:
    """Matched index of period t relative to period t - lag."""
    _check_lag(panel, t, lag)
    return matched_ratio(panel, t, t - lag, kind)


def hedonic_ratio(
    surface: HedonicSurface,
    panel: TransactionPanel,
    t_cur: int,
    t_base: int,
    kind: str = "F",
) -> float:
    """Bilateral hedonic index between two explicit periods.

    The P basket is the full current universe weighted by current
    quantities; the L basket is the full base universe weighted by base
    quantities.  Both need model prices at both periods, which is what
    lets entrants and exiters contribute.
    """
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}")
    if kind == "F":
        return math.sqrt(
            hedonic_ratio(surface, panel, t_cur, t_base, "L")
            * hedonic_ratio(surface, panel, t_cur, t_base, "P")
        )
    weight_period = t_base if kind == "L" else t_cur
    members = sorted(panel.transacting(weight_period))
    if not members:
        raise NoOverlapError(f"no products transact at period {weight_period}")
    return _ratio(
        _hedonic_basket(surface, panel, members, t_cur, weight_period),
        _hedonic_basket(surface, panel, members, t_base, weight_period),
    )


def bilateral_hedonic(
    surface: HedonicSurface,
    panel: TransactionPanel,
    t: int,
    lag: int,
    kind: str = "F",
) -> float:
    """Hedonic index of period t relative to period t - lag."""
    _check_lag(panel, t, lag)
    return hedonic_ratio(surface, panel, t, t - lag, kind)


def jevons_ratio(panel: TransactionPanel, t_cur: int, t_base: int) -> float:
    """Unweighted geometric mean of price relatives over the common set."""
    members = sorted(panel.transacting(t_cur) & panel.transacting(t_base))
    if not members:
        raise NoOverlapError(f"no products transact in both {t_cur} and {t_base}")
    rows = [panel.product_index(p) for p in members]
    p_cur = panel.price_matrix()[rows, t_cur]
    p_base = panel.price_matrix()[rows, t_base]
    bad = [m for m, a, b in zip(members, p_cur, p_base) if not (a > 0 and b > 0)]
    if bad:
        raise ValidationError(f"nonpositive prices for {bad[:10]}")
    return float(np.exp(np.mean(np.log(p_cur / p_base))))


def jevons(panel: TransactionPanel, t: int, lag: int) -> float:
    _check_lag(panel, t, lag)
    return jevons_ratio(panel, t, t - lag)


def _check_lag(panel: TransactionPanel, t: int, lag: int) -> None:
    if lag < 0:
        raise ValidationError(f"negative lag {lag}")
    if t - lag < 0:
        raise ValidationError(f"period {t} minus lag {lag} is before the panel start")
    if t >= panel.n_periods:
        raise ValidationError(f"period {t} outside the panel")


# ---------------------------------------------------------------------------
# Series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexSeries:
    """Chained index levels on the grid base, base + lag, ..., base level 1."""

    levels: Mapping[int, float]
    base: int
    lag: int
    kind: str

    def __post_init__(self):
        levels = dict(self.levels)
        if levels.get(self.base) != 1.0:
            raise ValidationError("base period must carry level 1")
        if any(v <= 0 or not math.isfinite(v) for v in levels.values()):
            raise ValidationError("index levels must be positive and finite")
        object.__setattr__(self, "levels", levels)

    def level(self, t: int) -> float:
        if t not in self.levels:
            raise AlignmentError(f"no level at period {t} for kind {self.kind}")
        return self.levels[t]

    def periods(self) -> list[int]:
        return sorted(self.levels)


def chain(
    bilateral: Callable[[int, int], float],
    base: int,
    lag: int,
    steps: int,
    kind: str = "chained",
) -> IndexSeries:
    """Compound a bilateral t vs t - lag function along the lag grid."""
    if lag < 1 or steps < 0:
        raise ValidationError("lag must be >= 1 and steps >= 0")
    levels = {base: 1.0}
    value = 1.0
    for k in range(1, steps + 1):
        t = base + k * lag
        try:
            ratio = bilateral(t, lag)
        except HedonixError as e:
            raise ChainError(f"period {t}: {e}", step=k) from e
        value *= ratio
        levels[t] = value
    return IndexSeries(levels=levels, base=base, lag=lag, kind=kind)


def geometric_combine(a: IndexSeries, b: IndexSeries) -> IndexSeries:
    """sqrt(a * b) on the common period grid (both must include the base)."""
    common = sorted(set(a.levels) & set(b.levels))
    if not common:
        raise AlignmentError("series share no periods")
    base = common[0]
    if a.levels[base] != 1.0 or b.levels[base] != 1.0:
        raise AlignmentError("series do not share a unit base on the common grid")
    levels = {t: math.sqrt(a.levels[t] * b.levels[t]) for t in common}
    return IndexSeries(levels=levels, base=base, lag=math.gcd(a.lag, b.lag), kind="combined")


def annualized_rate(series: IndexSeries, t0: int, t1: int) -> float:
    """Average yearly growth implied between two monthly periods.

    Returns a fraction per year, e.g. 0.10 for ten percent.
    """
    if t1 <= t0:
        raise ValidationError("t1 must be after t0")
    ratio = series.level(t1) / series.level(t0)
    return ratio ** (12.0 / (t1 - t0)) - 1.0
