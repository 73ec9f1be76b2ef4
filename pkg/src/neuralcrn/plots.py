"""Small static SVG charts: polylines, scatter glyphs and label grids."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H, PAD = 480, 360, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _frame(title: str, xlabel: str, ylabel: str, body: list[str], xr, yr) -> str:
    ticks = []
    for v in np.linspace(*xr, 5):
        x = _sx(v, xr)
        ticks.append(f'<text x="{x:.1f}" y="{H - PAD + 16}" font-size="10" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(*yr, 5):
        y = _sy(v, yr)
        ticks.append(f'<text x="{PAD - 6}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{v:.3g}</text>')
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" font-size="14" text-anchor="middle">{escape(title)}</text>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        *body, *ticks,
        f'<text x="{W / 2}" y="{H - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
        "</svg>", ""])


def _range(values) -> tuple[float, float]:
    v = np.asarray([u for u in np.ravel(values) if np.isfinite(u)], float)
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _sx(v, xr):
    return PAD + (v - xr[0]) / (xr[1] - xr[0]) * (W - 2 * PAD)


def _sy(v, yr):
    return H - PAD - (v - yr[0]) / (yr[1] - yr[0]) * (H - 2 * PAD)


def line_plot(series: dict, title: str = "", xlabel: str = "iteration", ylabel: str = "loss") -> str:
    """One polyline per named series of (x, y) arrays."""
    xs = [np.asarray(x, float) for x, _ in series.values()]
    ys = [np.asarray(y, float) for _, y in series.values()]
    xr = _range(np.concatenate(xs) if xs else [])
    yr = _range(np.concatenate(ys) if ys else [])
    body = []
    for k, (name, x, y) in enumerate(zip(series, xs, ys)):
        pts = " ".join(f"{_sx(a, xr):.1f},{_sy(b, yr):.1f}" for a, b in zip(x, y) if np.isfinite(b))
        color = COLORS[k % len(COLORS)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1"/>')
        body.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 + 14 * k}" font-size="11" fill="{color}" '
                    f'text-anchor="end">{escape(name)}</text>')
    return _frame(title, xlabel, ylabel, body, xr, yr)


def scatter_plot(series: dict, title: str = "", xlabel: str = "target", ylabel: str = "predicted",
                 identity: bool = True) -> str:
    """Scatter of named (x, y) point sets, with the y = x reference line."""
    allx = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ally = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    r = _range(np.concatenate([allx, ally]))
    body = []
    if identity:
        body.append(f'<line x1="{_sx(r[0], r):.1f}" y1="{_sy(r[0], r):.1f}" x2="{_sx(r[1], r):.1f}" '
                    f'y2="{_sy(r[1], r):.1f}" stroke="gray" stroke-dasharray="4 3"/>')
    for k, (name, (x, y)) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        body += [f'<circle cx="{_sx(a, r):.1f}" cy="{_sy(b, r):.1f}" r="2.5" fill="{color}" fill-opacity="0.6"/>'
                 for a, b in zip(x, y) if np.isfinite(b)]
        body.append(f'<text x="{PAD + 6}" y="{PAD + 14 + 14 * k}" font-size="11" fill="{color}">{escape(name)}</text>')
    return _frame(title, xlabel, ylabel, body, r, r)


def grid_plot(rows, points=(), title: str = "", on: str = "ON") -> str:
    """Decision grid cells shaded by label, with optional labelled data points on top."""
    x1 = np.array([r[0] for r in rows])
    x2 = np.array([r[1] for r in rows])
    xr, yr = _range(x1), _range(x2)
    u1, u2 = np.unique(x1), np.unique(x2)
    dx = (xr[1] - xr[0]) / max(len(u1) - 1, 1)
    dy = (yr[1] - yr[0]) / max(len(u2) - 1, 1)
    xr = (xr[0] - dx / 2, xr[1] + dx / 2)
    yr = (yr[0] - dy / 2, yr[1] + dy / 2)
    cw = dx / (xr[1] - xr[0]) * (W - 2 * PAD)
    ch = dy / (yr[1] - yr[0]) * (H - 2 * PAD)
    body = []
    for a, b, _, lab in rows:
        fill = "#f4b6b6" if lab == on else "#b6cff4"
        body.append(f'<rect x="{_sx(a, xr) - cw / 2:.1f}" y="{_sy(b, yr) - ch / 2:.1f}" '
                    f'width="{cw + 0.3:.1f}" height="{ch + 0.3:.1f}" fill="{fill}"/>')
    for x, lab in points:
        color = COLORS[1] if lab == on else COLORS[0]
        body.append(f'<circle cx="{_sx(x[0], xr):.1f}" cy="{_sy(x[1], yr):.1f}" r="2" fill="{color}"/>')
    return _frame(title, "x1", "x2", body, xr, yr)
