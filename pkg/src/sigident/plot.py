"""Dependency-free SVG scatter plots of 2-D embeddings.

Output is a pure function of the inputs (fixed palette, fixed number
formatting), so identical inputs give identical bytes.
"""

from __future__ import annotations

from html import escape

import numpy as np

SVG_VERSION = 1

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31",
    "#843c39", "#7b4173", "#3182bd", "#e6550d", "#31a354", "#756bb1",
    "#636363", "#9c9ede",
)
NOISE_COLOR = "#9e9e9e"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def scatter_svg(points, groups=None, names: dict | None = None, title: str = "",
                width: int = 720, height: int = 540, radius: float = 2.5) -> str:
    """Render points colored by integer group.

    ``names`` maps group -> legend text (defaults to the group number).
    Group -1 is noise: drawn as small grey crosses with its own legend entry.
    An empty point set yields a valid SVG with an empty plot area.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    groups = np.zeros(n, dtype=np.int64) if groups is None else np.asarray(groups, dtype=np.int64)
    if len(groups) != n:
        raise ValueError("need one group per point")
    names = dict(names or {})
    legend_w = 170
    pad = 30
    top = 40 if title else pad
    plot_w, plot_h = width - legend_w - 2 * pad, height - top - pad
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-format-version="{SVG_VERSION}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<rect x="{pad}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333333"/>',
    ]
    if title:
        out.append(f'<text x="{pad}" y="24" font-family="sans-serif" font-size="16">{escape(title)}</text>')

    present = sorted(set(groups.tolist()))
    colors, k = {}, 0
    for g in present:
        if g < 0:
            colors[g] = NOISE_COLOR
        else:
            colors[g] = PALETTE[k % len(PALETTE)]
            k += 1

    if n:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        sx = pad + 5 + (pts[:, 0] - lo[0]) / span[0] * (plot_w - 10)
        sy = top + plot_h - 5 - (pts[:, 1] - lo[1]) / span[1] * (plot_h - 10)
        # noise underneath, then groups in ascending order
        for g in present:
            sel = np.flatnonzero(groups == g)
            out.append(f'<g class="group" data-group="{g}" fill="{colors[g]}" stroke="{colors[g]}">')
            for i in sel:
                x, y = _fmt(sx[i]), _fmt(sy[i])
                if g < 0:
                    a, b, c, d = (_fmt(sx[i] - 2), _fmt(sy[i] - 2), _fmt(sx[i] + 2), _fmt(sy[i] + 2))
                    out.append(f'<path d="M{a} {b}L{c} {d}M{a} {d}L{c} {b}" fill="none"/>')
                else:
                    out.append(f'<circle cx="{x}" cy="{y}" r="{radius}" stroke="none" fill-opacity="0.75"/>')
            out.append("</g>")

    lx = width - legend_w + 5
    out.append('<g class="legend" font-family="sans-serif" font-size="12">')
    for row, g in enumerate(present):
        y = top + 10 + 18 * row
        label = "noise" if g < 0 else names.get(g, str(g))
        if g < 0:
            out.append(f'<path d="M{lx} {y - 4}L{lx + 8} {y + 4}M{lx} {y + 4}L{lx + 8} {y - 4}" '
                       f'stroke="{NOISE_COLOR}" fill="none"/>')
        else:
            out.append(f'<circle cx="{lx + 4}" cy="{y}" r="5" fill="{colors[g]}"/>')
        out.append(f'<text class="legend-entry" x="{lx + 14}" y="{y + 4}">{escape(label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def legend_entries(svg: str) -> list[str]:
    """Legend labels in order, parsed back out of an SVG from :func:`scatter_svg`."""
    import re
    from html import unescape

    return [unescape(m) for m in re.findall(r'<text class="legend-entry"[^>]*>([^<]*)</text>', svg)]
