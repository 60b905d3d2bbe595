"""Static SVG line charts for pipeline artifacts.

Charts are rendered from scratch into plain SVG text with fixed
formatting, so a rerun over unchanged inputs reproduces every byte.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

from .errors import ReportError

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

_MARGINS = (60.0, 20.0, 42.0, 16.0)  # left, right, bottom, top


@dataclass(frozen=True)
class Series:
    label: str
    xs: tuple[float, ...]
    ys: tuple[float, ...]


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + k * step for k in range(n)]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def line_chart(
    series: list[Series],
    title: str,
    y_label: str = "",
    width: int = 760,
    height: int = 420,
) -> str:
    """Render labelled polylines with axes, ticks, and a legend."""
    if not series or all(len(s.xs) == 0 for s in series):
        raise ReportError(f"chart {title!r} has no data")
    left, right, bottom, top = _MARGINS
    plot_w = width - left - right
    plot_h = height - bottom - top
    all_x = [x for s in series for x in s.xs]
    all_y = [y for s in series for y in s.ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.04 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    def px(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{left:.2f}" y="{top - 4:.2f}" font-family="monospace" font-size="13" '
        f'fill="#000000">{title}</text>',
    ]
    axis_y = top + plot_h
    out.append(
        f'<line x1="{left:.2f}" y1="{axis_y:.2f}" x2="{left + plot_w:.2f}" y2="{axis_y:.2f}" '
        f'stroke="#333333" stroke-width="1"/>'
    )
    out.append(
        f'<line x1="{left:.2f}" y1="{top:.2f}" x2="{left:.2f}" y2="{axis_y:.2f}" '
        f'stroke="#333333" stroke-width="1"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        x = px(tx)
        out.append(
            f'<line x1="{x:.2f}" y1="{axis_y:.2f}" x2="{x:.2f}" y2="{axis_y + 4:.2f}" '
            f'stroke="#333333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{axis_y + 16:.2f}" font-family="monospace" font-size="10" '
            f'fill="#333333" text-anchor="middle">{_fmt(tx)}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        y = py(ty)
        out.append(
            f'<line x1="{left - 4:.2f}" y1="{y:.2f}" x2="{left:.2f}" y2="{y:.2f}" '
            f'stroke="#333333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{left - 7:.2f}" y="{y + 3:.2f}" font-family="monospace" font-size="10" '
            f'fill="#333333" text-anchor="end">{_fmt(ty)}</text>'
        )
    if y_label:
        out.append(
            f'<text x="12" y="{top + 10:.2f}" font-family="monospace" font-size="10" '
            f'fill="#333333">{y_label}</text>'
        )
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.xs, s.ys))
        out.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = top + 14 + 13 * k
        lx = left + plot_w - 150
        out.append(
            f'<line x1="{lx:.2f}" y1="{ly - 3:.2f}" x2="{lx + 16:.2f}" y2="{ly - 3:.2f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{lx + 20:.2f}" y="{ly:.2f}" font-family="monospace" font-size="10" '
            f'fill="#000000">{s.label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def render_report(output_dir: str) -> list[str]:
    """Render the four run charts from a completed output directory.

    Needs indices.csv, holdout_r2.csv, and panel_stats.csv; raises with
    the full list of anything missing or empty.
    """
    needed = {
        "indices.csv": os.path.join(output_dir, "indices.csv"),
        "holdout_r2.csv": os.path.join(output_dir, "holdout_r2.csv"),
        "panel_stats.csv": os.path.join(output_dir, "panel_stats.csv"),
    }
    missing = [name for name, path in needed.items() if not os.path.exists(path)]
    if missing:
        raise ReportError(f"missing artifacts in {output_dir}: {', '.join(sorted(missing))}")
    tables = {name: _read_csv(path) for name, path in needed.items()}
    empty = [name for name, rows in tables.items() if not rows]
    if empty:
        raise ReportError(f"empty artifacts in {output_dir}: {', '.join(sorted(empty))}")

    grouped: dict[str, list[tuple[float, float]]] = {}
    for row in tables["indices.csv"]:
        key = f"{row['kind']} lag={row['lag']}"
        grouped.setdefault(key, []).append((float(row["period"]), float(row["level"])))
    index_series = [
        Series(label=key, xs=tuple(x for x, _ in pts), ys=tuple(y for _, y in pts))
        for key, pts in sorted(grouped.items())
    ]

    r2_rows = [r for r in tables["holdout_r2.csv"] if r["period"] != "pooled" and r["r2"] != ""]
    r2_series = [
        Series(
            label="holdout r2",
            xs=tuple(float(r["period"]) for r in r2_rows),
            ys=tuple(float(r["r2"]) for r in r2_rows),
        )
    ]

    stats = tables["panel_stats.csv"]
    turn_rows = [r for r in stats if r["turnover_rate"] != ""]
    turnover_series = [
        Series(
            label="turnover rate",
            xs=tuple(float(r["period"]) for r in turn_rows),
            ys=tuple(float(r["turnover_rate"]) for r in turn_rows),
        )
    ]
    growth_rows = [r for r in stats if r["growth_ratio"] != ""]
    growth_series = [
        Series(
            label="product growth",
            xs=tuple(float(r["period"]) for r in growth_rows),
            ys=tuple(float(r["growth_ratio"]) for r in growth_rows),
        )
    ]

    charts = {
        "report.svg": line_chart(index_series, "price index paths", "level"),
        "report_r2.svg": line_chart(r2_series, "hold-out fit by month", "r2"),
        "report_turnover.svg": line_chart(turnover_series, "product turnover by month", "share"),
        "report_growth.svg": line_chart(growth_series, "product count growth", "ratio"),
    }
    written = []
    for name, svg in charts.items():
        path = os.path.join(output_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
        written.append(path)
    return written
