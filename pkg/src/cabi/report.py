"""Report emission: region-fraction CSV tables and SVG scatter plots of
buffer states over the toy map (legal square, start / danger / goal zones)."""

from __future__ import annotations

import csv

import numpy as np

from .metrics import region_fractions

_VIEW = 2.2          # world half-width shown, leaves room for illegal samples
_PX = 560            # canvas size in pixels
_SCALE = _PX / (2 * _VIEW)


def _px(x, y):
    return (x + _VIEW) * _SCALE, (_VIEW - y) * _SCALE


def buffer_scatter_svg(buffer, title: str, max_points: int = 10_000) -> str:
    """Next states of a buffer over the map outlines, as an SVG document."""
    s2 = np.atleast_2d(np.asarray(buffer.s2, dtype=np.float64))
    if s2.shape[1] != 2:
        raise ValueError("scatter plots require 2-d states")
    if len(s2) > max_points:
        s2 = s2[:max_points]

    x0, y0 = _px(-1.5, 1.5)
    x1, y1 = _px(1.5, -1.5)
    side = x1 - x0
    cx2, cy2 = _px(0.0, 0.0)
    cx1, cy1 = _px(-1.5, -1.5)
    cx3, cy3 = _px(1.5, 1.5)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PX}" '
        f'height="{_PX}" viewBox="0 0 {_PX} {_PX}">',
        f'<rect width="{_PX}" height="{_PX}" fill="white"/>',
        '<defs><clipPath id="legal">'
        f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{side:.1f}" '
        f'height="{side:.1f}"/></clipPath></defs>',
        # start and goal zones are discs cropped to the legal square
        '<g clip-path="url(#legal)">'
        f'<circle cx="{cx1:.1f}" cy="{cy1:.1f}" r="{_SCALE:.1f}" '
        'fill="#8fd19e" fill-opacity="0.5"/>'
        f'<circle cx="{cx3:.1f}" cy="{cy3:.1f}" r="{0.8 * _SCALE:.1f}" '
        'fill="#ffd966" fill-opacity="0.6"/></g>',
        f'<circle cx="{cx2:.1f}" cy="{cy2:.1f}" r="{0.5 * _SCALE:.1f}" '
        'fill="#e06666" fill-opacity="0.55"/>',
        f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{side:.1f}" '
        f'height="{side:.1f}" fill="none" stroke="black" stroke-width="1.5"/>',
        f'<text x="8" y="20" font-family="sans-serif" font-size="16">'
        f'{title}</text>',
    ]
    pts = []
    for x, y in s2:
        px, py = _px(float(x), float(y))
        pts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="1.2" '
                   'fill="#1f5fbf" fill-opacity="0.45"/>')
    parts.extend(pts)
    parts.append("</svg>")
    return "\n".join(parts)


def write_scatter(buffer, title: str, path: str) -> None:
    with open(path, "w") as f:
        f.write(buffer_scatter_svg(buffer, title))


def write_region_csv(rows, path: str) -> None:
    """rows: iterables of (label, buffer)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["buffer", "count", "danger_fraction",
                    "out_of_bounds_fraction"])
        for label, buf in rows:
            rep = region_fractions(buf)
            w.writerow([label, rep.count, f"{rep.danger_fraction:.6f}",
                        f"{rep.out_of_bounds_fraction:.6f}"])


def write_returns_csv(result, path: str, label: str = "policy") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "episode", "return"])
        for i, ret in enumerate(result.returns):
            w.writerow([label, i, f"{ret:.6f}"])
        w.writerow([label, "mean", f"{result.mean:.6f}"])
        w.writerow([label, "std", f"{result.std:.6f}"])
