"""Minimal self-contained SVG line charts (no external renderer).

Charts plot one or more series on a log10 y-axis with optional shaded
one-standard-deviation bands, which is all the trace reports need.
"""

from __future__ import annotations

import math

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _log_safe(v: float, floor: float) -> float:
    return math.log10(max(v, floor))


def line_chart(series: list[dict], title: str, xlabel: str, ylabel: str) -> str:
    """Render series [{label, y, band_lo?, band_hi?}] as an SVG document.

    ``y`` values are positive reals plotted on a log10 axis; zeros are
    clamped to a small floor so fully converged traces still render.
    """
    if not series:
        raise ValueError("need at least one series")
    series = [
        {
            "label": s["label"],
            "y": [float(v) for v in s["y"]],
            "band_lo": None if s.get("band_lo") is None else [float(v) for v in s["band_lo"]],
            "band_hi": None if s.get("band_hi") is None else [float(v) for v in s["band_hi"]],
        }
        for s in series
    ]
    pool = [v for s in series for v in s["y"]]
    for s in series:
        for key in ("band_lo", "band_hi"):
            if s[key] is not None:
                pool.extend(s[key])
    positives = [v for v in pool if v > 0]
    y_floor = min(positives) * 1e-2 if positives else 1e-12
    logs = [_log_safe(v, y_floor) for v in pool]
    lo, hi = min(logs), max(logs)
    if hi - lo < 1e-9:
        hi = lo + 1.0
    n_pts = max(len(s["y"]) for s in series)
    x_max = max(n_pts - 1, 1)

    def px(i: int) -> float:
        return _ML + (_W - _ML - _MR) * i / x_max

    def py(v: float) -> float:
        t = (_log_safe(v, y_floor) - lo) / (hi - lo)
        return _H - _MB - (_H - _MT - _MB) * t

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_H / 2:.1f})">{ylabel}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
    ]
    # Decade ticks on the y axis.
    for dec in range(math.ceil(lo), math.floor(hi) + 1):
        y = _H - _MB - (_H - _MT - _MB) * (dec - lo) / (hi - lo)
        parts.append(f'<line x1="{_ML - 4}" y1="{y:.1f}" x2="{_ML}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{y + 4:.1f}" text-anchor="end">1e{dec}</text>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        i = round(frac * x_max)
        x = px(i)
        parts.append(f'<line x1="{x:.1f}" y1="{_H - _MB}" x2="{x:.1f}" y2="{_H - _MB + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{_H - _MB + 18}" text-anchor="middle">{i}</text>')

    for idx, s in enumerate(series):
        color = _COLORS[idx % len(_COLORS)]
        if s["band_lo"] is not None and s["band_hi"] is not None:
            pts = [f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(s["band_hi"])]
            pts += [f"{px(i):.2f},{py(v):.2f}" for i, v in reversed(list(enumerate(s["band_lo"])))]
            parts.append(f'<polygon points="{" ".join(pts)}" fill="{color}" opacity="0.15"/>')
        pts = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(s["y"]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 16 * (idx + 1)
        parts.append(f'<line x1="{_W - _MR - 110}" y1="{ly}" x2="{_W - _MR - 90}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 84}" y="{ly + 4}">{s["label"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
