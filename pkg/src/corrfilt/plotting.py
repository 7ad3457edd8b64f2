"""Dependency-free plot output: a small SVG line chart or a matplotlib script."""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def svg_line_chart(series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
                   title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Render ``(label, xs, ys)`` series as a standalone SVG document."""
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(y)]
    if not pts:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    pad = 0.05 * (y1 - y0 or abs(y0) or 1.0)
    y0, y1 = y0 - pad, y1 + pad
    x1 = x1 if x1 > x0 else x0 + 1
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{HEIGHT - MARGIN + 16}" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN}" x2="{MARGIN + pw}" y1="{sy(t):.1f}" y2="{sy(t):.1f}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = MARGIN + 16 + 16 * i
        out.append(f'<line x1="{WIDTH - MARGIN - 150}" x2="{WIDTH - MARGIN - 130}" y1="{ly - 4}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 125}" y="{ly}">{escape(label)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" '
               f'font-size="14">{escape(title)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_script(csv_name: str, x_col: str, y_cols: Sequence[str],
                group_col: str | None = None, ylabel: str = "RMSE") -> str:
    """Text of a matplotlib script that plots ``csv_name`` from its own directory."""
    return f'''"""Plot {csv_name}. Requires matplotlib."""
import csv
import pathlib
from collections import defaultdict

import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
with open(here / {csv_name!r}) as fh:
    rows = list(csv.DictReader(fh))

group_col = {group_col!r}
curves = defaultdict(lambda: ([], []))
for row in rows:
    for col in {list(y_cols)!r}:
        key = col if group_col is None else f"{{col}} ({{group_col}}={{row[group_col]}})"
        curves[key][0].append(float(row[{x_col!r}]))
        curves[key][1].append(float(row[col]))

fig, ax = plt.subplots()
for key, (xs, ys) in curves.items():
    ax.plot(xs, ys, marker=".", label=key)
ax.set_xlabel({x_col!r})
ax.set_ylabel({ylabel!r})
ax.legend()
fig.savefig(here / {csv_name.rsplit(".", 1)[0] + ".png"!r}, dpi=150)
'''


def figure_series(header: Sequence[str], rows: Sequence[Sequence[float]]):
    """Split a figure table into SVG series; sweep tables are grouped by their second column."""
    if header[0] == "k":
        xs = [r[0] for r in rows]
        return [(header[j], xs, [r[j] for r in rows]) for j in (1, 2)]
    groups: dict[float, list] = {}
    for r in rows:
        groups.setdefault(r[1], []).append(r)
    series = []
    for g, grp in groups.items():
        xs = [r[0] for r in grp]
        for j in (2, 3):
            series.append((f"{header[j]} {header[1]}={g:g}", xs, [r[j] for r in grp]))
    return series
