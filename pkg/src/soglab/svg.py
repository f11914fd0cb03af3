"""Small deterministic SVG writers for loss curves and 2D trajectory overlays.

Output depends only on the inputs (fixed number formatting, no timestamps),
so plots can be compared byte for byte across runs.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT, MARGIN = 480, 360, 48


def _f(v: float) -> str:
    return f"{v:.2f}"


def color(i: int) -> str:
    return PALETTE[i % len(PALETTE)]


class _Frame:
    """Maps data coordinates to the plot box."""

    def __init__(self, x0, x1, y0, y1, width=WIDTH, height=HEIGHT, margin=MARGIN):
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.w, self.h, self.m = width, height, margin

    def px(self, x):
        return self.m + (x - self.x0) / (self.x1 - self.x0) * (self.w - 2 * self.m)

    def py(self, y):
        return self.h - self.m - (y - self.y0) / (self.y1 - self.y0) * (self.h - 2 * self.m)


def _header(w, h) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
    ]


def _axes(fr: _Frame, title: str, xlabel: str, ylabel: str, ylog: bool = False) -> list[str]:
    m, w, h = fr.m, fr.w, fr.h
    out = [
        f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" fill="none" stroke="black" stroke-width="1"/>',
        f'<text x="{w / 2:.1f}" y="{m / 2:.1f}" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{w / 2:.1f}" y="{h - 10}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="12" y="{h / 2:.1f}" text-anchor="middle" font-size="11" transform="rotate(-90 12 {h / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(fr.x0, fr.x1, 5):
        out.append(f'<text x="{_f(fr.px(v))}" y="{h - m + 14}" text-anchor="middle" font-size="9">{v:.3g}</text>')
    for v in np.linspace(fr.y0, fr.y1, 5):
        label = f"{10 ** v:.2g}" if ylog else f"{v:.3g}"
        out.append(f'<text x="{m - 4}" y="{_f(fr.py(v) + 3)}" text-anchor="end" font-size="9">{label}</text>')
    return out


def line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", log_y: bool = False) -> str:
    """``series`` maps a label to ``(x, y)``; non-finite (or non-positive on a log axis) points are dropped."""
    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        ok = np.isfinite(x) & np.isfinite(y)
        if log_y:
            ok &= y > 0
        x, y = x[ok], y[ok]
        clean[name] = (x, np.log10(y) if log_y else y)
    xs = np.concatenate([v[0] for v in clean.values()]) if clean else np.zeros(0)
    ys = np.concatenate([v[1] for v in clean.values()]) if clean else np.zeros(0)
    fr = _Frame(*(xs.min(), xs.max()) if xs.size else (0.0, 1.0), *(ys.min(), ys.max()) if ys.size else (0.0, 1.0))
    out = _header(fr.w, fr.h) + _axes(fr, title, xlabel, ylabel, log_y)
    for i, (name, (x, y)) in enumerate(clean.items()):
        if x.size:
            pts = " ".join(f"{_f(fr.px(a))},{_f(fr.py(b))}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color(i)}" stroke-width="1.5" points="{pts}"/>')
        ly = fr.m + 14 + 14 * i
        out.append(f'<text x="{fr.w - fr.m - 4}" y="{ly}" text-anchor="end" font-size="10" fill="{color(i)}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def code_groups(latents) -> list[int]:
    """Colour index per trajectory: argmax of one-hot codes, else order of first appearance."""
    groups, seen = [], {}
    for z in latents:
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        if z.size > 1 and np.all((z == 0) | (z == 1)) and z.sum() == 1:
            groups.append(int(np.argmax(z)))
            continue
        key = tuple(np.round(z, 12).tolist())
        groups.append(seen.setdefault(key, len(seen)))
    return groups


def trajectory_plot(trajectories, circles=(), title: str = "", extent: float | None = None) -> str:
    """Reference circles in grey, then one path per trajectory coloured by latent code.

    A single-point trajectory is drawn as a marker.
    """
    paths = [np.atleast_2d(t.positions()) for t in trajectories]
    pts = [p for p in paths if p.size]
    lim = extent
    if lim is None:
        lim = 0.0
        for c in circles:
            lim = max(lim, float(np.max(np.abs(c.c))) + c.radius)
        if pts:
            lim = max(lim, float(np.max(np.abs(np.vstack(pts)))))
        lim = 1.1 * lim if lim > 0 else 1.0
    fr = _Frame(-lim, lim, -lim, lim, width=HEIGHT, height=HEIGHT)
    scale = (fr.w - 2 * fr.m) / (2 * lim)
    out = _header(fr.w, fr.h) + _axes(fr, title, "x", "y")
    for c in circles:
        out.append(
            f'<circle cx="{_f(fr.px(c.c[0]))}" cy="{_f(fr.py(c.c[1]))}" r="{_f(c.radius * scale)}" '
            'fill="none" stroke="#999999" stroke-width="1" stroke-dasharray="4 3"/>'
        )
    groups = code_groups([t.latent for t in trajectories])
    for p, g in zip(paths, groups):
        if p.shape[0] == 0:
            continue
        if p.shape[0] == 1:
            out.append(f'<circle cx="{_f(fr.px(p[0, 0]))}" cy="{_f(fr.py(p[0, 1]))}" r="3" fill="{color(g)}"/>')
            continue
        d = " ".join(f"{_f(fr.px(x))},{_f(fr.py(y))}" for x, y in p)
        out.append(f'<polyline fill="none" stroke="{color(g)}" stroke-width="0.8" stroke-opacity="0.7" points="{d}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def finite_or_none(v):
    return v if isinstance(v, (int, float)) and math.isfinite(v) else None
