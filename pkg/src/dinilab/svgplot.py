"""Minimal SVG line plots (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT, PAD = 640, 420, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _scale(vals, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return [a + (v - lo) / span * (b - a) for v in vals]


def line_plot(path, series: Sequence[tuple], title: str, xlabel: str, ylabel: str,
              logy: bool = False) -> None:
    """Write ``series = [(label, xs, ys), ...]`` as an SVG polyline chart."""
    prepared = []
    for label, xs, ys in series:
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (y > 0 or not logy)]
        if logy:
            pts = [(x, math.log10(y)) for x, y in pts]
        if pts:
            prepared.append((label, pts))
    allx = [p[0] for _, pts in prepared for p in pts] or [0.0, 1.0]
    ally = [p[1] for _, pts in prepared for p in pts] or [0.0, 1.0]
    x0, x1, y0, y1 = min(allx), max(allx), min(ally), max(ally)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="25" text-anchor="middle" font-size="16">{escape(title)}</text>',
           f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
           f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">'
           f'{escape(xlabel)}</text>',
           f'<text x="15" y="{HEIGHT / 2}" font-size="13" transform="rotate(-90 15 {HEIGHT / 2})" '
           f'text-anchor="middle">{escape(ylabel + (" (log10)" if logy else ""))}</text>']
    for v, tx in ((x0, PAD), (x1, WIDTH - PAD)):
        out.append(f'<text x="{tx}" y="{HEIGHT - PAD + 18}" text-anchor="middle" '
                   f'font-size="11">{v:.3g}</text>')
    for v, ty in ((y0, HEIGHT - PAD), (y1, PAD)):
        out.append(f'<text x="{PAD - 6}" y="{ty + 4}" text-anchor="end" font-size="11">{v:.3g}</text>')
    for i, (label, pts) in enumerate(prepared):
        xs = _scale([p[0] for p in pts], x0, x1, PAD, WIDTH - PAD)
        ys = _scale([p[1] for p in pts], y0, y1, HEIGHT - PAD, PAD)
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        out.append(f'<text x="{WIDTH - PAD - 5}" y="{PAD + 16 * (i + 1)}" text-anchor="end" '
                   f'font-size="12" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
