"""Self-contained SVG line plots."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def line_plot_svg(series, path=None, title="", xlabel="", ylabel="", logy=False, width=480, height=320):
    """``series`` maps a label to ``(xs, ys)``. Returns the SVG text."""
    pad_l, pad_r, pad_t, pad_b = 64, 16, 28, 44
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if not logy or y > 0]
    if not pts:
        raise ValueError("nothing to plot")
    fy = (lambda v: math.log10(v)) if logy else (lambda v: v)
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(fy(p[1]) for p in pts), max(fy(p[1]) for p in pts)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    W, H = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * W

    def sy(y):
        return pad_t + H - (fy(y) - y0) / (y1 - y0) * H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
           f'font-size="11">', f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{H}" fill="none" stroke="#444"/>']
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fyv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{pad_t + H + 14}" text-anchor="middle">{fx:.3g}</text>')
        label = f"1e{fyv:.1f}" if logy else f"{fyv:.3g}"
        ypix = pad_t + H - k / 4 * H
        out.append(f'<text x="{pad_l - 4}" y="{ypix + 4:.1f}" text-anchor="end">{label}</text>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys) if not logy or y > 0)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{pad_l + 8}" y="{pad_t + 14 + 13 * i}" fill="{color}">{escape(str(name))}</text>')
    out.append(f'<text x="{width / 2}" y="16" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{pad_l + W / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{pad_t + H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {pad_t + H / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    text = "\n".join(out)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
