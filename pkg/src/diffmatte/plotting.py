"""Minimal self-contained SVG line plots (no timestamps, so output is reproducible)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_plot(series: dict[str, tuple[list, list]], title: str = "", xlabel: str = "", ylabel: str = "",
              xticks: list[str] | None = None) -> str:
    """Render named (x, y) series; non-finite y values are skipped. ``xticks`` labels x = 0, 1, ..."""
    xs = [x for x_list, _ in series.values() for x in x_list]
    ys = [y for _, y_list in series.values() for y in y_list if math.isfinite(y)]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x0) / (x1 - x0) * pw

    def py(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN - 4}" y="{_fmt(py(y0))}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{MARGIN - 4}" y="{_fmt(py(y1))}" text-anchor="end" font-size="10">{y1:.4g}</text>',
    ]
    if xticks:
        for i, label in enumerate(xticks):
            out.append(f'<text x="{_fmt(px(i))}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" font-size="10">{escape(label)}</text>')
    else:
        out.append(f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 14}" font-size="10">{x0:.4g}</text>')
        out.append(f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 14}" text-anchor="end" font-size="10">{x1:.4g}</text>')
    for k, (name, (x_list, y_list)) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(x_list, y_list) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14 * k}" text-anchor="end" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
