"""Minimal self-contained SVG writer for log-log benchmark curves.

No plotting dependency: axes, decade ticks, polylines, markers, a legend,
and a slope annotation are emitted directly as SVG elements.
"""

from __future__ import annotations

import math

_WIDTH, _HEIGHT = 760, 520
_MARGIN = 70
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#e377c2")


def _decades(lo: float, hi: float) -> list[float]:
    first = math.floor(math.log10(lo))
    last = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(first, last + 1)]


class _LogMap:
    def __init__(self, lo, hi, out_lo, out_hi):
        self.llo, self.lhi = math.log10(lo), math.log10(hi)
        self.out_lo, self.out_hi = out_lo, out_hi

    def __call__(self, v: float) -> float:
        if self.lhi == self.llo:
            return 0.5 * (self.out_lo + self.out_hi)
        frac = (math.log10(v) - self.llo) / (self.lhi - self.llo)
        return self.out_lo + frac * (self.out_hi - self.out_lo)


def loglog_svg(path, curves, title: str = "", xlabel: str = "", ylabel: str = "",
               annotation: str = ""):
    """Write a log-log chart.

    curves: list of dicts with keys xs, ys (positive values), label, and an
    optional dashed flag.  Non-positive ys are dropped point-wise.
    """
    cleaned = []
    for curve in curves:
        pts = [(x, y) for x, y in zip(curve["xs"], curve["ys"]) if y > 0 and x > 0]
        if pts:
            cleaned.append({**curve, "pts": pts})
    if not cleaned:
        raise ValueError("nothing to plot")
    all_x = [p[0] for c in cleaned for p in c["pts"]]
    all_y = [p[1] for c in cleaned for p in c["pts"]]
    xmap = _LogMap(min(all_x), max(all_x), _MARGIN, _WIDTH - _MARGIN)
    ymap = _LogMap(min(all_y), max(all_y), _HEIGHT - _MARGIN, _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="28" font-size="16" text-anchor="middle" '
        f'font-family="sans-serif">{title}</text>',
    ]
    axis = 'stroke="black" stroke-width="1.2"'
    parts.append(f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
                 f'y2="{_HEIGHT - _MARGIN}" {axis}/>')
    parts.append(f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
                 f'y2="{_HEIGHT - _MARGIN}" {axis}/>')

    for tick in _decades(min(all_x), max(all_x)):
        if tick < min(all_x) / 1.001 or tick > max(all_x) * 1.001:
            continue
        x = xmap(tick)
        parts.append(f'<line x1="{x:.1f}" y1="{_HEIGHT - _MARGIN}" x2="{x:.1f}" '
                     f'y2="{_HEIGHT - _MARGIN + 6}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{_HEIGHT - _MARGIN + 22}" font-size="12" '
                     f'text-anchor="middle" font-family="sans-serif">1e{int(math.log10(tick))}</text>')
    for tick in _decades(min(all_y), max(all_y)):
        if tick < min(all_y) / 1.001 or tick > max(all_y) * 1.001:
            continue
        y = ymap(tick)
        parts.append(f'<line x1="{_MARGIN - 6}" y1="{y:.1f}" x2="{_MARGIN}" y2="{y:.1f}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{_MARGIN - 10}" y="{y + 4:.1f}" font-size="12" '
                     f'text-anchor="end" font-family="sans-serif">1e{int(math.log10(tick))}</text>')

    parts.append(f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 16}" font-size="13" '
                 f'text-anchor="middle" font-family="sans-serif">{xlabel}</text>')
    parts.append(f'<text x="20" y="{_HEIGHT / 2}" font-size="13" text-anchor="middle" '
                 f'font-family="sans-serif" transform="rotate(-90 20 {_HEIGHT / 2})">{ylabel}</text>')

    for i, curve in enumerate(cleaned):
        color = _COLORS[i % len(_COLORS)]
        dash = ' stroke-dasharray="7,4"' if curve.get("dashed") else ""
        coords = " ".join(f"{xmap(x):.2f},{ymap(y):.2f}" for x, y in curve["pts"])
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.8"{dash}/>')
        for x, y in curve["pts"]:
            parts.append(f'<circle cx="{xmap(x):.2f}" cy="{ymap(y):.2f}" r="3" '
                         f'fill="{color}"/>')
        ly = _MARGIN + 18 * i
        parts.append(f'<line x1="{_WIDTH - _MARGIN - 150}" y1="{ly}" '
                     f'x2="{_WIDTH - _MARGIN - 120}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="1.8"{dash}/>')
        parts.append(f'<text x="{_WIDTH - _MARGIN - 112}" y="{ly + 4}" font-size="12" '
                     f'font-family="sans-serif">{curve.get("label", f"curve {i}")}</text>')

    if annotation:
        parts.append(f'<text x="{_MARGIN + 12}" y="{_MARGIN + 4}" font-size="13" '
                     f'font-family="sans-serif">{annotation}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
