"""Dependency-free SVG line plots (truth vs prediction with an optional band)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 960, 480
_MARGIN = (70, 30, 40, 50)  # left, right, top, bottom
_COLORS = ("#555555", "#e07020", "#2a8a3a", "#c02020", "#2060c0")


def _padded_range(values: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo
    pad = 0.05 * span if span > 0 else max(abs(lo), 1.0) * 0.1
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    return np.arange(math.ceil(lo / step) * step, hi + 1e-12 * step, step)


def emit_plot(series: dict, bands: dict | None, path, title: str = "",
              x=None) -> Path:
    """Write a 960x480 SVG with one polyline per entry of ``series``.

    Parameters
    ----------
    series : dict
        ``{label: values}``; all series must share a length.
    bands : dict or None
        ``{label: (lower, upper)}`` shaded regions drawn beneath the lines.
    path : str or Path
        Output file.
    x : array_like, optional
        Abscissae; defaults to the sample index.
    """
    if not series:
        raise ValueError("need at least one series")
    data = {k: np.asarray(v, dtype=float).ravel() for k, v in series.items()}
    lengths = {v.size for v in data.values()}
    bands = {k: (np.asarray(lo, float).ravel(), np.asarray(hi, float).ravel())
             for k, (lo, hi) in (bands or {}).items()}
    lengths |= {a.size for pair in bands.values() for a in pair}
    if len(lengths) != 1 or 0 in lengths:
        raise ValueError(f"series and bands must share one nonzero length, got {sorted(lengths)}")
    n = lengths.pop()
    xs = np.arange(n, dtype=float) if x is None else np.asarray(x, dtype=float)
    if xs.size != n:
        raise ValueError("x has the wrong length")

    ys = np.concatenate(list(data.values()) + [a for p in bands.values() for a in p])
    y0, y1 = _padded_range(ys[np.isfinite(ys)])
    x0, x1 = (xs[0], xs[-1]) if n > 1 and xs[-1] > xs[0] else (xs[0] - 1, xs[0] + 1)
    left, right, top, bottom = _MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - v) / (y1 - y0) * ph

    def pts(xv, yv):
        return " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xv, yv))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    colors = {k: _COLORS[i % len(_COLORS)] for i, k in enumerate(data)}
    for i, (k, (lo, hi)) in enumerate(bands.items()):
        poly = pts(xs, hi) + " " + pts(xs[::-1], lo[::-1])
        out.append(f'<polygon points="{poly}" fill="{colors.get(k, _COLORS[i % 5])}" '
                   f'fill-opacity="0.25" stroke="none"/>')
    # axes and ticks
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
               f'stroke="black"/>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" '
                   f'stroke="black"/><text x="{left - 8}" y="{py(t) + 4:.2f}" font-size="12" '
                   f'text-anchor="end">{t:.4g}</text>')
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{top + ph}" x2="{px(t):.2f}" '
                   f'y2="{top + ph + 5}" stroke="black"/><text x="{px(t):.2f}" '
                   f'y="{top + ph + 20}" font-size="12" text-anchor="middle">{t:.4g}</text>')
    for k, v in data.items():
        out.append(f'<polyline points="{pts(xs, v)}" fill="none" stroke="{colors[k]}" '
                   f'stroke-width="1.5"/>')
    for i, k in enumerate(data):
        yy = top + 15 + 18 * i
        out.append(f'<line x1="{left + 10}" y1="{yy}" x2="{left + 35}" y2="{yy}" '
                   f'stroke="{colors[k]}" stroke-width="2"/><text x="{left + 40}" '
                   f'y="{yy + 4}" font-size="12">{escape(str(k))}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="{top - 12}" font-size="14" '
                   f'text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>\n")
    path = Path(path)
    path.write_text("\n".join(out))
    return path
