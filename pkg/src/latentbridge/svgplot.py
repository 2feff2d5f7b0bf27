"""Minimal hand-written SVG line charts (800x400, one polyline per series)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 400
_MARGIN = dict(left=60, right=160, top=40, bottom=40)
_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf"]


def line_plot_svg(series: dict, title: str = "", xlabel: str = "pseudotime",
                  ylabel: str = "value") -> str:
    """``series`` maps a legend label to ``(x, y)`` arrays."""
    xs = [np.asarray(x, float) for x, _ in series.values()] or [np.array([0.0, 1.0])]
    ys = [np.asarray(y, float) for _, y in series.values()] or [np.array([0.0, 1.0])]
    x0, x1 = min(x.min() for x in xs), max(x.max() for x in xs)
    y0, y1 = min(y.min() for y in ys), max(y.max() for y in ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - _MARGIN["left"] - _MARGIN["right"]
    ph = HEIGHT - _MARGIN["top"] - _MARGIN["bottom"]

    def px(x):
        return _MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return _MARGIN["top"] + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
           f'<rect x="{_MARGIN["left"]}" y="{_MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="black"/>',
           f'<text x="{_MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle" '
           f'font-size="12">{escape(xlabel)}</text>',
           f'<text x="14" y="{_MARGIN["top"] + ph / 2:.1f}" font-size="12" '
           f'transform="rotate(-90 14 {_MARGIN["top"] + ph / 2:.1f})" text-anchor="middle">'
           f'{escape(ylabel)}</text>',
           f'<text x="{_MARGIN["left"] - 4}" y="{py(y1) + 4:.1f}" text-anchor="end" font-size="10">{y1:.3g}</text>',
           f'<text x="{_MARGIN["left"] - 4}" y="{py(y0):.1f}" text-anchor="end" font-size="10">{y0:.3g}</text>']
    for i, (label, (x, y)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = _MARGIN["top"] + 14 * i + 8
        lx = WIDTH - _MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
