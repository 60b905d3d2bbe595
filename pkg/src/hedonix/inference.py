"""Hold-out inference on value embeddings.

With the trunk frozen, each period's prices are regressed on the value
embeddings of products the network never trained on.  That low
dimensional OLS supports standard errors, normal-quantile confidence
intervals for both the fitted hedonic price and the observed sale
price, Bonferroni-adjusted significance, and median aggregation across
repeated data splits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    AlignmentError,
    InsufficientDataError,
    SingularDesignError,
    ValidationError,
)
from .market import TransactionPanel
from .network import ValueEmbeddingTable


@dataclass(frozen=True)
class OlsFit:
    """Per-period regression of prices on value embeddings."""

    period: int
    theta_hat: np.ndarray  # (p,)
    covariance: np.ndarray  # (p, p)
    residual_variance: float
    n_obs: int
    ridge: float | None = None

    def __post_init__(self):
        p = self.theta_hat.shape[0]
        if self.covariance.shape != (p, p):
            raise ValidationError("covariance shape does not match coefficients")

    @property
    def coef_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    lower: float
    upper: float
    level: float
    kind: str  # "hedonic_price" or "sale_price"

    def __post_init__(self):
        if not self.lower <= self.center <= self.upper:
            raise ValidationError("interval bounds out of order")
        if not 0.0 < self.level < 1.0:
            raise ValidationError("confidence level must lie in (0, 1)")

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2.0


def ols_on_embeddings(
    table: ValueEmbeddingTable,
    panel: TransactionPanel,
    t: int,
    holdout: Sequence[str],
    ridge: float | None = None,
    robust: bool = False,
) -> OlsFit:
    """Regress period-t observed prices on hold-out value embeddings.

    The hold-out set must be disjoint from the products that trained the
    trunk.  A rank-deficient design raises unless a small ridge penalty
    is explicitly requested, in which case the fit is flagged.
    """
    holdout = sorted(set(holdout))
    leaked = set(holdout) & table.conditioning
    if leaked:
        raise ValidationError(
            f"hold-out products overlap the training split: {sorted(leaked)[:5]}"
        )
    prices = panel.price_matrix()
    usable = [
        pid
        for pid in holdout
        if np.isfinite(prices[panel.product_index(pid), t])
        and prices[panel.product_index(pid), t] > 0
    ]
    V = table.subset(usable) if usable else np.empty((0, 1))
    y = np.array([prices[panel.product_index(pid), t] for pid in usable])
    n, p = V.shape
    if n <= p:
        raise InsufficientDataError(
            f"period {t}: {n} observations for {p} coefficients"
        )
    gram = V.T @ V
    if ridge is not None:
        gram = gram + ridge * np.eye(p)
    rank = np.linalg.matrix_rank(gram)
    if rank < p:
        raise SingularDesignError(
            f"period {t}: design rank {rank} < {p}; pass a ridge penalty to proceed"
        )
    if ridge is None:
        theta, *_ = np.linalg.lstsq(V, y, rcond=None)
    else:
        theta = np.linalg.solve(gram, V.T @ y)
    resid = y - V @ theta
    sigma2 = float(resid @ resid / (n - p))
    gram_inv = np.linalg.inv(gram)
    if robust:
        meat = V.T @ (V * np.square(resid)[:, None])
        cov = gram_inv @ meat @ gram_inv
    else:
        cov = sigma2 * gram_inv
    return OlsFit(
        period=t,
        theta_hat=theta,
        covariance=cov,
        residual_variance=sigma2,
        n_obs=n,
        ridge=ridge,
    )


def standard_error(fit: OlsFit, v: np.ndarray) -> float:
    """sqrt(v' Cov v), the deviation of the fitted price at embedding v."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValidationError("non-finite embedding vector")
    return float(np.sqrt(max(v @ fit.covariance @ v, 0.0)))


def hedonic_ci(fit: OlsFit, v: np.ndarray, alpha: float = 0.1) -> ConfidenceInterval:
    """Two-sided normal interval for the fitted hedonic price theta'v."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    center = float(fit.theta_hat @ v)
    half = float(ndtri(1.0 - alpha / 2.0)) * standard_error(fit, v)
    return ConfidenceInterval(
        center=center, lower=center - half, upper=center + half,
        level=1.0 - alpha, kind="hedonic_price",
    )


def predictive_ci(
    fit: OlsFit,
    v: np.ndarray,
    alpha: float = 0.1,
    price_residual_variance: float = 0.0,
) -> ConfidenceInterval:
    """Interval for the observed sale price: widens the hedonic interval by
    the residual price variance around the hedonic price."""
    if price_residual_variance < 0:
        raise ValidationError("price residual variance must be >= 0")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    center = float(fit.theta_hat @ v)
    se = standard_error(fit, v)
    half = float(ndtri(1.0 - alpha / 2.0)) * float(np.sqrt(se**2 + price_residual_variance))
    return ConfidenceInterval(
        center=center, lower=center - half, upper=center + half,
        level=1.0 - alpha, kind="sale_price",
    )


@dataclass(frozen=True)
class SignificanceReport:
    period: int
    p_values: np.ndarray
    significant: np.ndarray  # bool, Bonferroni-adjusted
    alpha: float


def pvalues_bonferroni(fit: OlsFit, alpha: float = 0.05) -> SignificanceReport:
    """Two-sided normal p-values per coefficient; a coefficient is flagged
    significant when its p-value clears alpha divided by the number of
    coefficients."""
    se = fit.coef_se
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, np.abs(fit.theta_hat) / np.where(se > 0, se, 1.0), np.inf)
    z = np.where((se == 0) & (fit.theta_hat == 0), 0.0, z)
    p = 2.0 * (1.0 - ndtr(z))
    return SignificanceReport(
        period=fit.period,
        p_values=p,
        significant=p <= alpha / fit.theta_hat.shape[0],
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# Aggregation across repeated splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitInference:
    """One split's estimates with interval bounds on an aligned grid."""

    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    p_values: np.ndarray | None = None


@dataclass(frozen=True)
class SplitAggregate:
    splits: int
    medians: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    adjusted_level: float
    p_values: np.ndarray | None = None
    significant: np.ndarray | None = None


def median_aggregate(
    per_split: Sequence[SplitInference], alpha: float = 0.1
) -> SplitAggregate:
    """Entrywise medians of estimates and interval bounds across splits.

    Median p-values are compared against alpha/2 and the aggregate
    interval is reported at the adjusted nominal level 1 - alpha/2.
    """
    if not per_split:
        raise ValidationError("no splits to aggregate")
    shape = per_split[0].estimates.shape
    for s in per_split:
        if (
            s.estimates.shape != shape
            or s.lower.shape != shape
            or s.upper.shape != shape
        ):
            raise AlignmentError("split grids are not aligned")
    est = np.median(np.stack([s.estimates for s in per_split]), axis=0)
    lo = np.median(np.stack([s.lower for s in per_split]), axis=0)
    hi = np.median(np.stack([s.upper for s in per_split]), axis=0)
    p_med = None
    flags = None
    if all(s.p_values is not None for s in per_split):
        pshape = per_split[0].p_values.shape
        if any(s.p_values.shape != pshape for s in per_split):
            raise AlignmentError("p-value grids are not aligned")
        p_med = np.median(np.stack([s.p_values for s in per_split]), axis=0)
        flags = p_med <= alpha / 2.0
    return SplitAggregate(
        splits=len(per_split),
        medians=est,
        lower=lo,
        upper=hi,
        adjusted_level=1.0 - alpha / 2.0,
        p_values=p_med,
        significant=flags,
    )
