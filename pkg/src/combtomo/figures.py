"""Plain SVG heatmaps and bar charts, written without a plotting library."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np


def _color(value: float, vmax: float) -> str:
    # diverging blue-white-red
    s = 0.0 if vmax == 0 else max(-1.0, min(1.0, value / vmax))
    if s >= 0:
        r, g, b = 255, round(255 * (1 - s)), round(255 * (1 - s))
    else:
        r, g, b = round(255 * (1 + s)), round(255 * (1 + s)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(panels: Sequence[tuple[str, np.ndarray]], labels: Sequence[str] = ("I", "X", "Y", "Z"),
                cell: int = 22, vmax: float | None = None) -> str:
    """Side-by-side heatmaps sharing one symmetric colour scale."""
    mats = [np.asarray(m, dtype=float) for _, m in panels]
    if vmax is None:
        vmax = max([float(np.max(np.abs(m))) for m in mats] + [0.0])
    n = mats[0].shape[0] if mats else 0
    width = max(1, len(mats)) * (n * cell + 40) + 20
    height = n * cell + 70
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="10" y="14" font-size="11">scale: +/-{vmax:.3g}</text>']
    for k, ((title, _), m) in enumerate(zip(panels, mats)):
        x0 = 30 + k * (n * cell + 40)
        y0 = 40
        out.append(f'<text x="{x0}" y="{y0 - 8}" font-size="11">{escape(title)}</text>')
        for i in range(n):
            out.append(f'<text x="{x0 - 14}" y="{y0 + i * cell + cell * 0.7:.1f}" font-size="10">'
                       f'{escape(labels[i % len(labels)])}</text>')
            for j in range(n):
                out.append(f'<rect x="{x0 + j * cell}" y="{y0 + i * cell}" width="{cell}" '
                           f'height="{cell}" fill="{_color(m[i, j], vmax)}" stroke="#888" '
                           f'stroke-width="0.5"><title>{m[i, j]:.6g}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart_svg(groups: Sequence[str], series: Sequence[str], values: np.ndarray,
                  title: str = "", log_scale: bool = True) -> str:
    """Grouped bars; ``values[g, s]`` is the height of series ``s`` in group ``g``."""
    values = np.asarray(values, dtype=float).reshape(len(groups), len(series))
    palette = ["#3b6ea5", "#d1495b", "#66a182", "#edae49"]
    bar, gap, height = 18, 24, 220
    width = 60 + len(groups) * (len(series) * bar + gap)
    finite = values[np.isfinite(values) & (values > 0)] if log_scale else values[np.isfinite(values)]
    if finite.size == 0:
        lo, hi = 0.0, 1.0
    elif log_scale:
        lo, hi = math.floor(np.log10(finite.min())), math.ceil(np.log10(finite.max()))
        hi = hi if hi > lo else lo + 1
    else:
        lo, hi = 0.0, float(finite.max()) or 1.0

    def scale(v):
        if not np.isfinite(v) or (log_scale and v <= 0):
            return 0.0
        x = np.log10(v) if log_scale else v
        return height * (x - lo) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 90}">',
           f'<text x="10" y="16" font-size="12">{escape(title)}</text>']
    base = height + 30
    out.append(f'<line x1="50" y1="{base}" x2="{width - 5}" y2="{base}" stroke="black"/>')
    axis = f"1e{lo}" if log_scale else f"{lo:g}"
    top = f"1e{hi}" if log_scale else f"{hi:.3g}"
    out.append(f'<text x="5" y="{base}" font-size="10">{axis}</text>')
    out.append(f'<text x="5" y="{base - height + 4}" font-size="10">{top}</text>')
    for g, name in enumerate(groups):
        x0 = 55 + g * (len(series) * bar + gap)
        for s in range(len(series)):
            h = scale(values[g, s])
            out.append(f'<rect x="{x0 + s * bar}" y="{base - h:.2f}" width="{bar - 2}" height="{h:.2f}" '
                       f'fill="{palette[s % len(palette)]}"><title>{escape(series[s])}: '
                       f'{values[g, s]:.4g}</title></rect>')
        out.append(f'<text x="{x0}" y="{base + 14}" font-size="9">{escape(name)}</text>')
    for s, name in enumerate(series):
        y = base + 32 + 14 * s
        out.append(f'<rect x="55" y="{y - 9}" width="10" height="10" fill="{palette[s % len(palette)]}"/>')
        out.append(f'<text x="70" y="{y}" font-size="10">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
