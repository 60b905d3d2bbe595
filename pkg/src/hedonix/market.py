"""Transaction panels and product catalogs.

A panel is built once from raw rows (CSV, JSONL, or in-memory tuples),
validated, and then immutable: duplicate (product, period) rows are summed
before validation, periods are normalised to a dense 0-based index with
the original labels retained, and prices are derived as sales/quantity
with quantity 0 marking "no sale" (price missing).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ParseError,
    ProductLookupError,
    UndefinedRateError,
    ValidationError,
)

TRANSACTION_COLUMNS = ("product_id", "period", "sales", "quantity")
CATALOG_COLUMNS = ("product_id", "title", "description", "bullet_points", "image_features")


@dataclass(frozen=True)
class TransactionRecord:
    """One (product, period) cell: total sales and units sold.

    ``period`` is the panel's dense internal index.  A record with
    quantity 0 is a "no sale" marker and carries no price.
    """

    product_id: str
    period: int
    sales: float
    quantity: float

    @property
    def price(self) -> float | None:
        if self.quantity > 0:
            return self.sales / self.quantity
        return None


def compute_price(rec: TransactionRecord) -> float | None:
    """Average transaction price sales/quantity, or None when nothing sold."""
    return rec.price


@dataclass(frozen=True)
class ProductCatalogEntry:
    """Static product description: title, free text, optional image vector."""

    product_id: str
    title: str
    description: str = ""
    bullet_points: tuple[str, ...] = ()
    image_features: np.ndarray | None = None

    def __post_init__(self):
        if not self.title:
            raise ValidationError(f"product {self.product_id!r}: empty title")
        if self.image_features is not None:
            feats = np.asarray(self.image_features, dtype=np.float64)
            if feats.ndim != 1 or not np.all(np.isfinite(feats)):
                raise ValidationError(
                    f"product {self.product_id!r}: image features must be a finite vector"
                )
            object.__setattr__(self, "image_features", feats)

    def text(self) -> str:
        """Title, description and bullet points joined for tokenisation."""
        parts = [self.title, self.description, *self.bullet_points]
        return " ".join(p for p in parts if p)


def _looks_like_yyyymm(value: int) -> bool:
    return 100001 <= value <= 999912 and 1 <= value % 100 <= 12


def _month_index(yyyymm: int, origin: int) -> int:
    y0, m0 = divmod(origin, 100)
    y, m = divmod(yyyymm, 100)
    return (y - y0) * 12 + (m - m0)


def _month_label(origin: int, offset: int) -> int:
    y0, m0 = divmod(origin, 100)
    m = m0 - 1 + offset
    return (y0 + m // 12) * 100 + m % 12 + 1


class TransactionPanel:
    """Immutable panel over products x dense periods.

    The period axis covers every month (or integer step) between the
    smallest and largest label seen, so chaining arithmetic can assume
    contiguity; unseen periods simply have no transacting products.
    """

    def __init__(self, rows: Iterable[tuple[str, int, float, float]]):
        aggregated: dict[tuple[str, int], list[float]] = {}
        labels: set[int] = set()
        for product_id, label, sales, quantity in rows:
            labels.add(label)
            cell = aggregated.setdefault((str(product_id), int(label)), [0.0, 0.0])
            cell[0] += float(sales)
            cell[1] += float(quantity)
        if not aggregated:
            raise ValidationError("panel has no rows")

        yyyymm = all(_looks_like_yyyymm(v) for v in labels)
        origin = min(labels)
        if yyyymm:
            n_periods = _month_index(max(labels), origin) + 1
            period_labels = tuple(_month_label(origin, k) for k in range(n_periods))
            to_index = {lab: k for k, lab in enumerate(period_labels)}
        else:
            n_periods = max(labels) - origin + 1
            period_labels = tuple(range(origin, origin + n_periods))
            to_index = {lab: k for k, lab in enumerate(period_labels)}

        product_ids = tuple(sorted({pid for pid, _ in aggregated}))
        pid_index = {pid: i for i, pid in enumerate(product_ids)}

        sales = np.zeros((len(product_ids), n_periods))
        qty = np.zeros_like(sales)
        has_record = np.zeros(sales.shape, dtype=bool)
        zero_price: list[tuple[str, int]] = []
        for (pid, label), (s, q) in aggregated.items():
            if not (math.isfinite(s) and math.isfinite(q)):
                raise ValidationError(f"product {pid!r} period {label}: non-finite values")
            if s < 0:
                raise ValidationError(f"product {pid!r} period {label}: negative sales {s}")
            if q < 0:
                raise ValidationError(f"product {pid!r} period {label}: negative quantity {q}")
            i, t = pid_index[pid], to_index[label]
            sales[i, t] = s
            qty[i, t] = q
            has_record[i, t] = True
            if q > 0 and s == 0:
                zero_price.append((pid, label))

        with np.errstate(invalid="ignore", divide="ignore"):
            prices = np.where(qty > 0, sales / np.where(qty > 0, qty, 1.0), np.nan)

        for arr in (sales, qty, has_record, prices):
            arr.setflags(write=False)
        self.product_ids = product_ids
        self.period_labels = period_labels
        self.is_yyyymm = yyyymm
        self._pid_index = pid_index
        self._sales = sales
        self._quantity = qty
        self._has_record = has_record
        self._prices = prices
        self.zero_price_cells = tuple(sorted(zero_price))

    # -- basic geometry ----------------------------------------------------

    @property
    def n_periods(self) -> int:
        return len(self.period_labels)

    @property
    def n_products(self) -> int:
        return len(self.product_ids)

    def period_index(self, label: int) -> int:
        try:
            return self.period_labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown period label {label}") from None

    def product_index(self, product_id: str) -> int:
        try:
            return self._pid_index[product_id]
        except KeyError:
            raise ProductLookupError(product_id) from None

    # -- matrices (read-only views) -----------------------------------------

    def sales_matrix(self) -> np.ndarray:
        return self._sales

    def quantity_matrix(self) -> np.ndarray:
        return self._quantity

    def price_matrix(self) -> np.ndarray:
        """Prices sales/quantity with NaN at cells without a positive quantity."""
        return self._prices

    def transacted_mask(self) -> np.ndarray:
        return self._quantity > 0

    # -- record access -------------------------------------------------------

    def record(self, product_id: str, t: int) -> TransactionRecord | None:
        i = self.product_index(product_id)
        if not self._has_record[i, t]:
            return None
        return TransactionRecord(product_id, t, float(self._sales[i, t]), float(self._quantity[i, t]))

    def records(self) -> Iterator[TransactionRecord]:
        idx = np.argwhere(self._has_record)
        for i, t in idx:
            yield TransactionRecord(
                self.product_ids[i], int(t), float(self._sales[i, t]), float(self._quantity[i, t])
            )

    # -- period universes ----------------------------------------------------

    def _check_period(self, t: int) -> None:
        if not 0 <= t < self.n_periods:
            raise ValidationError(f"period {t} outside [0, {self.n_periods})")

    def transacting(self, t: int) -> frozenset[str]:
        """The universe of products with a positive quantity at period t."""
        self._check_period(t)
        mask = self._quantity[:, t] > 0
        return frozenset(self.product_ids[i] for i in np.flatnonzero(mask))

    def n_transacting(self, t: int) -> int:
        self._check_period(t)
        return int(np.count_nonzero(self._quantity[:, t] > 0))

    def first_transaction_period(self, product_id: str) -> int | None:
        i = self.product_index(product_id)
        hits = np.flatnonzero(self._quantity[i] > 0)
        return int(hits[0]) if hits.size else None

    def products_with_sales(self) -> frozenset[str]:
        mask = (self._quantity > 0).any(axis=1)
        return frozenset(self.product_ids[i] for i in np.flatnonzero(mask))

    def quality_report(self) -> dict:
        """Data-quality flags: zero-price cells and no-sale markers."""
        return {
            "zero_price_cells": [list(c) for c in self.zero_price_cells],
            "no_sale_records": int(np.count_nonzero(self._has_record & ~(self._quantity > 0))),
            "n_products": self.n_products,
            "n_periods": self.n_periods,
        }


# ---------------------------------------------------------------------------
# Panel-level statistics
# ---------------------------------------------------------------------------


def match_set(panel: TransactionPanel, t: int, lag: int) -> frozenset[str]:
    """Products transacting in both period t and period t - lag."""
    if lag < 0:
        raise ValidationError(f"negative lag {lag}")
    if t - lag < 0:
        raise ValidationError(f"period {t} minus lag {lag} is before the panel start")
    cur = panel.transacting(t)
    if lag == 0:
        return cur
    return cur & panel.transacting(t - lag)


def turnover_rate(panel: TransactionPanel, t: int) -> float:
    """Share of period-t transacting products absent in t - 1."""
    if t < 1:
        raise ValidationError("turnover needs a previous period")
    cur = panel.transacting(t)
    if not cur:
        raise UndefinedRateError(f"no transacting products at period {t}")
    prev = panel.transacting(t - 1)
    return len(cur - prev) / len(cur)


def growth_ratio(panel: TransactionPanel, t: int, base: int) -> float:
    """Count of transacting products at t relative to the base period."""
    n_base = panel.n_transacting(base)
    if n_base == 0:
        raise UndefinedRateError(f"no transacting products at base period {base}")
    return panel.n_transacting(t) / n_base


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _parse_period(raw: str, line: int) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ParseError(f"period {raw!r} is not an integer or YYYYMM", line) from None


def _parse_number(raw: str, name: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"{name} {raw!r} is not a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"{name} {raw!r} is not finite", line)
    return value


def _open_text(source: str | BinaryIO | io.TextIOBase):
    if isinstance(source, (str, bytes)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")

def _iter_transaction_rows(source, fmt: str):
    stream = _open_text(source)
    if fmt == "csv":
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRANSACTION_COLUMNS:
            raise ParseError(
                f"expected header {','.join(TRANSACTION_COLUMNS)}, got {header}", 1
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 fields, got {len(row)}", line)
            yield line, row[0], row[1], row[2], row[3]
    elif fmt == "jsonl":
        for line, text in enumerate(stream, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line) from None
            missing = [k for k in TRANSACTION_COLUMNS if k not in obj]
            if missing:
                raise ParseError(f"missing keys {missing}", line)
            yield line, obj["product_id"], str(obj["period"]), str(obj["sales"]), str(obj["quantity"])
    else:
        raise ValidationError(f"unknown format {fmt!r}; expected 'csv' or 'jsonl'")


def ingest_transactions(source, fmt: str = "csv") -> TransactionPanel:
    """Parse and validate a transaction stream into an immutable panel.

    Duplicate (product, period) rows are summed before validation, which
    is also how sub-monthly data rolls up to the panel frequency.
    """
    rows = []
    for line, pid, period_raw, sales_raw, qty_raw in _iter_transaction_rows(source, fmt):
        pid = str(pid).strip()
        if not pid:
            raise ParseError("empty product_id", line)
        period = _parse_period(str(period_raw).strip(), line)
        sales = _parse_number(str(sales_raw).strip(), "sales", line)
        qty = _parse_number(str(qty_raw).strip(), "quantity", line)
        rows.append((pid, period, sales, qty))
    return TransactionPanel(rows)


def _parse_image_features(raw: str, line: int) -> np.ndarray | None:
    raw = raw.strip()
    if not raw:
        return None
    try:
        return np.array([float(x) for x in raw.split(";")])
    except ValueError:
        raise ParseError(f"bad image_features {raw!r}", line) from None


def ingest_catalog(source, fmt: str = "csv") -> list[ProductCatalogEntry]:
    """Parse the product catalog; bullet points are '|'-separated,
    image features ';'-separated decimals."""
    stream = _open_text(source)
    entries: list[ProductCatalogEntry] = []
    seen: set[str] = set()

    def build(line, pid, title, desc, bullets, feats):
        pid = str(pid).strip()
        if pid in seen:
            raise ParseError(f"duplicate catalog product {pid!r}", line)
        seen.add(pid)
        try:
            return ProductCatalogEntry(
                product_id=pid,
                title=str(title).strip(),
                description=str(desc).strip(),
                bullet_points=tuple(b.strip() for b in bullets if b.strip()),
                image_features=feats,
            )
        except ValidationError as e:
            raise ParseError(str(e), line) from None

    if fmt == "csv":
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CATALOG_COLUMNS:
            raise ParseError(f"expected header {','.join(CATALOG_COLUMNS)}, got {header}", 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 fields, got {len(row)}", line)
            feats = _parse_image_features(row[4], line)
            entries.append(build(line, row[0], row[1], row[2], row[3].split("|"), feats))
    elif fmt == "jsonl":
        for line, text in enumerate(stream, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line) from None
            bullets = obj.get("bullet_points", [])
            if isinstance(bullets, str):
                bullets = bullets.split("|")
            feats = obj.get("image_features")
            if isinstance(feats, str):
                feats = _parse_image_features(feats, line)
            elif feats is not None:
                feats = np.asarray(feats, dtype=np.float64)
            entries.append(
                build(line, obj["product_id"], obj.get("title", ""), obj.get("description", ""), bullets, feats)
            )
    else:
        raise ValidationError(f"unknown format {fmt!r}; expected 'csv' or 'jsonl'")

    dims = {e.image_features.shape[0] for e in entries if e.image_features is not None}
    if len(dims) > 1:
        raise ValidationError(f"inconsistent image feature dimensions {sorted(dims)}")
    return entries


def write_transactions_csv(panel_rows: Sequence[tuple[str, int, float, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRANSACTION_COLUMNS)
        for pid, period, sales, qty in panel_rows:
            w.writerow([pid, period, f"{sales:.12g}", f"{qty:.12g}"])


def write_catalog_csv(entries: Sequence[ProductCatalogEntry], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CATALOG_COLUMNS)
        for e in entries:
            feats = "" if e.image_features is None else ";".join(f"{v:.12g}" for v in e.image_features)
            w.writerow([e.product_id, e.title, e.description, "|".join(e.bullet_points), feats])
