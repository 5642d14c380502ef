"""Plain SVG rendering of a synthesis trace (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=70, right=20, top=30, bottom=50)


def _nice_ticks(lo, hi, count=6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def trace_svg(trace, references=None, title="mu-bar along K-updates") -> str:
    """SVG line plot of the exact upper bound against the K-update index.

    D-steps are drawn as gray vertical lines; `references` maps a label to a
    horizontal dashed line (e.g. model-based results).
    """
    references = dict(references or {})
    pts = [(r.k_update_index, r.mu_bar_exact) for r in trace.records if np.isfinite(r.mu_bar_exact)]
    d_steps = [r.k_update_index for r in trace.records if r.phase == "D"]
    ys = [y for _, y in pts] + [v for v in references.values() if np.isfinite(v)]
    xs = [x for x, _ in pts] or [0, 1]
    x_lo, x_hi = 0.0, max(max(xs), 1)
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return MARGIN["top"] + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>',
    ]
    for t in _nice_ticks(y_lo, y_hi):
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{sy(t):.2f}" '
                   f'y2="{sy(t):.2f}" stroke="#eee"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    for t in _nice_ticks(x_lo, x_hi):
        out.append(f'<text x="{sx(t):.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{t:.0f}</text>')
    for x in d_steps:
        out.append(f'<line class="d-step" x1="{sx(x):.2f}" x2="{sx(x):.2f}" y1="{MARGIN["top"]}" '
                   f'y2="{MARGIN["top"] + ph}" stroke="#999" stroke-width="1"/>')
    colors = ["#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    for i, (label, value) in enumerate(references.items()):
        if not np.isfinite(value):
            continue
        c = colors[i % len(colors)]
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{sy(value):.2f}" '
                   f'y2="{sy(value):.2f}" stroke="{c}" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{MARGIN["left"] + pw - 4}" y="{sy(value) - 4:.2f}" text-anchor="end" '
                   f'fill="{c}">{escape(label)}</text>')
    if pts:
        # step plot: the value holds until the next record
        path = [f"M{sx(pts[0][0]):.2f},{sy(pts[0][1]):.2f}"]
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            path.append(f"L{sx(x1):.2f},{sy(y0):.2f}L{sx(x1):.2f},{sy(y1):.2f}")
        out.append(f'<path d="{"".join(path)}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
               f'fill="none" stroke="black"/>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">K-update</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">mu-bar</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_trace_svg(trace, path, references=None) -> None:
    with open(path, "w") as fh:
        fh.write(trace_svg(trace, references))
