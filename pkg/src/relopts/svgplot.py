"""Dependency-free SVG heatmaps.

Colormap: 9-stop diverging ramp (deep blue through white to deep red),
linearly interpolated, centered at zero and symmetric in range. Stops, low
to high:

    #313695 #4575b4 #74add1 #abd9e9 #f7f7f7 #fdae61 #f46d43 #d73027 #a50026
"""

from __future__ import annotations

import os

import numpy as np

DIVERGING_STOPS = [
    "#313695", "#4575b4", "#74add1", "#abd9e9", "#f7f7f7",
    "#fdae61", "#f46d43", "#d73027", "#a50026",
]


def _hex_to_rgb(h: str) -> tuple[int, int, int]:
    h = h.lstrip("#")
    return int(h[0:2], 16), int(h[2:4], 16), int(h[4:6], 16)


_STOPS_RGB = np.array([_hex_to_rgb(h) for h in DIVERGING_STOPS], dtype=np.float64)


def colormap(t: float) -> str:
    """t in [0, 1] -> interpolated hex color."""
    t = min(1.0, max(0.0, float(t)))
    x = t * (len(_STOPS_RGB) - 1)
    i = min(int(x), len(_STOPS_RGB) - 2)
    frac = x - i
    rgb = _STOPS_RGB[i] * (1 - frac) + _STOPS_RGB[i + 1] * frac
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def heatmap_svg(values: np.ndarray, title: str = "", cell: int = 24,
                marks: list[tuple[int, int, str]] | None = None) -> str:
    """values[x, y] -> SVG text; zero-centered diverging colors.

    `marks` are (x, y, color) circles drawn over cells (e.g. fixed teammates).
    """
    vals = np.asarray(values, dtype=np.float64)
    w, h = vals.shape
    vmax = np.nanmax(np.abs(vals)) or 1.0
    pad_top = 28 if title else 4
    width = w * cell + 8
    height = h * cell + pad_top + 4
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    for x in range(w):
        for y in range(h):
            v = vals[x, y]
            t = 0.5 if np.isnan(v) else 0.5 + 0.5 * (v / vmax)
            out.append(
                f'<rect x="{4 + x * cell}" y="{pad_top + y * cell}" width="{cell}" '
                f'height="{cell}" fill="{colormap(t)}" stroke="#cccccc" stroke-width="0.5"/>'
            )
    for (mx, my, color) in marks or []:
        cx = 4 + mx * cell + cell / 2
        cy = pad_top + my * cell + cell / 2
        out.append(f'<circle cx="{cx}" cy="{cy}" r="{cell * 0.3:.1f}" fill="{color}" '
                   f'stroke="black" stroke-width="1"/>')
    out.append("</svg>")
    return "\n".join(out)


def write_heatmap(path: str, values: np.ndarray, title: str = "",
                  marks: list[tuple[int, int, str]] | None = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(heatmap_svg(values, title=title, marks=marks))
