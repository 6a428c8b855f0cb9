"""Static log-log error plots written as self-contained SVG."""

from __future__ import annotations

import math
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

from .study import SweepRecord, read_csv

__all__ = ["render_svg", "emit_plot"]

WIDTH, HEIGHT = 640, 480
MARGIN = dict(left=70, right=170, top=30, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def _groups(records: Sequence[SweepRecord]) -> Dict[Tuple[str, int], List[Tuple[float, float]]]:
    out: Dict[Tuple[str, int], List[Tuple[float, float]]] = {}
    for r in records:
        if math.isfinite(r.err_fro) and r.err_fro > 0 and r.R > 0:
            out.setdefault((r.method, r.q), []).append((r.R, r.err_fro))
    return {k: sorted(v) for k, v in sorted(out.items())}


def _decades(lo: float, hi: float) -> Tuple[float, float]:
    a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
    if a == b:
        b += 1
    return float(a), float(b)


def render_svg(records: Sequence[SweepRecord], title: str = "resonance error") -> str:
    groups = _groups(records)
    if not groups:
        raise ValueError("no finite positive errors to plot")
    Rs = [p[0] for pts in groups.values() for p in pts]
    Es = [p[1] for pts in groups.values() for p in pts]
    x0, x1 = math.log10(min(Rs)), math.log10(max(Rs))
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.1, x1 + 0.1
    y0, y1 = _decades(min(Es), max(Es))
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def X(R):
        return MARGIN["left"] + pw * (math.log10(R) - x0) / (x1 - x0)

    def Y(e):
        return MARGIN["top"] + ph * (y1 - math.log10(e)) / (y1 - y0)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN["left"] + pw / 2:.2f}" y="18" text-anchor="middle">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black"/>',
    ]
    for k in range(int(y0), int(y1) + 1):
        y = Y(10.0**k)
        out.append(f'<line x1="{MARGIN["left"]}" y1="{y:.2f}" x2="{MARGIN["left"] + pw}" '
                   f'y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{y + 4:.2f}" text-anchor="end">1e{k}</text>')
    for R in sorted(set(Rs)):
        x = X(R)
        out.append(f'<text x="{x:.2f}" y="{MARGIN["top"] + ph + 16}" text-anchor="middle">{R:g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.2f}" y="{HEIGHT - 12}" '
               'text-anchor="middle">sampling box size R</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.2f})">error (Frobenius)</text>')

    for idx, ((method, q), pts) in enumerate(groups.items()):
        color = PALETTE[idx % len(PALETTE)]
        label = f"{method} q={q}" if q >= 0 else method
        coords = " ".join(f"{X(R):.2f},{Y(e):.2f}" for R, e in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for R, e in pts:
            out.append(f'<circle cx="{X(R):.2f}" cy="{Y(e):.2f}" r="2.5" fill="{color}"/>')
        if q >= 0 and len(pts) >= 1:
            # reference slope -(q+1) anchored at the first point
            Ra, ea = pts[0]
            Rb = max(Rs)
            eb = ea * (Rb / Ra) ** (-(q + 1))
            eb = max(eb, 10.0**y0)
            Rb = Ra * (eb / ea) ** (-1.0 / (q + 1))
            out.append(f'<line x1="{X(Ra):.2f}" y1="{Y(ea):.2f}" x2="{X(Rb):.2f}" y2="{Y(eb):.2f}" '
                       f'stroke="{color}" stroke-dasharray="4 3" class="guide" '
                       f'data-slope="{-(q + 1)}"/>')
        ly = MARGIN["top"] + 14 + 18 * idx
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" '
                   'stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(csv_path, svg_path, title: str = "resonance error") -> str:
    """Read a sweep CSV and write the log-log plot; returns the SVG text."""
    svg = render_svg(read_csv(csv_path), title)
    with open(svg_path, "w") as fh:
        fh.write(svg)
    return svg
