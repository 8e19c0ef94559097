"""Minimal SVG line and scatter plots written by hand (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def plot(path, series, title="", xlabel="", ylabel="", provenance="", width=640, height=400, hlines=None):
    """Write an SVG with one polyline (or marker set) per series.

    ``series`` is a list of dicts with keys ``label``, ``x``, ``y`` and optional
    ``style`` ("line" or "points"). ``hlines`` maps labels to constant y values.
    """
    hlines = hlines or {}
    xs = [float(v) for s in series for v in s["x"]]
    ys = [float(v) for s in series for v in s["y"] if v is not None and math.isfinite(v)] + list(hlines.values())
    if not xs or not ys:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = 64, 150, 36, 48
    pw, ph = width - L - R, height - T - B

    def px(x):
        return L + (x - x0) / (x1 - x0) * pw

    def py(y):
        return T + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- {escape(provenance)} -->" if provenance else "<!-- -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{L}" y1="{T + ph}" x2="{L + pw}" y2="{T + ph}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{T + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_fmt(px(t))}" y1="{T + ph}" x2="{_fmt(px(t))}" y2="{T + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{T + ph + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{L - 4}" y1="{_fmt(py(t))}" x2="{L}" y2="{_fmt(py(t))}" stroke="black"/>')
        out.append(f'<text x="{L - 6}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{L + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {T + ph / 2:.1f})">{escape(ylabel)}</text>')

    legend = []
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = [(px(float(a)), py(float(b))) for a, b in zip(s["x"], s["y"]) if b is not None and math.isfinite(b)]
        if s.get("style", "line") == "points":
            out.extend(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="2.5" fill="{color}"/>' for a, b in pts)
        elif pts:
            coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        legend.append((s.get("label", f"series {i}"), color, ""))
    for j, (label, yv) in enumerate(sorted(hlines.items())):
        color = PALETTE[(len(series) + j) % len(PALETTE)]
        out.append(f'<line x1="{L}" y1="{_fmt(py(yv))}" x2="{L + pw}" y2="{_fmt(py(yv))}" stroke="{color}" '
                   f'stroke-dasharray="5,3"/>')
        legend.append((label, color, "5,3"))
    for k, (label, color, dash) in enumerate(legend):
        ly = T + 12 + 16 * k
        d = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{L + pw + 10}" y1="{ly}" x2="{L + pw + 28}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{d}/>')
        out.append(f'<text x="{L + pw + 32}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
