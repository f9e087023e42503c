"""Static SVG line charts and histograms, for offline inspection of results."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class _Axes:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0

    def px(self, x):
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y):
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _frame(ax, title, xlabel, ylabel):
    b, l, r, t = HEIGHT - MARGIN, MARGIN, WIDTH - MARGIN, MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>',
        f'<line x1="{l}" y1="{b}" x2="{l}" y2="{t}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(ax.x0, ax.x1, 5):
        parts.append(f'<text x="{ax.px(v):.1f}" y="{b + 14}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(ax.y0, ax.y1, 5):
        parts.append(f'<text x="{l - 4}" y="{ax.py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    return parts


def _legend(names):
    return [
        f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 14 * k}" text-anchor="end" fill="{COLORS[k % len(COLORS)]}">{escape(str(n))}</text>'
        for k, n in enumerate(names)
    ]


def line_svg(x, series: dict, title="", xlabel="", ylabel="") -> str:
    """One polyline per entry of ``series`` (name -> y values over ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    ys = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    ally = np.concatenate(list(ys.values())) if ys else np.zeros(1)
    ax = _Axes((x.min(), x.max()), (min(0.0, ally.min()), ally.max()))
    parts = _frame(ax, title, xlabel, ylabel)
    for k, (name, y) in enumerate(ys.items()):
        pts = " ".join(f"{ax.px(a):.1f},{ax.py(b):.1f}" for a, b in zip(x, y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{COLORS[k % len(COLORS)]}" stroke-width="2"/>')
    parts += _legend(ys)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(groups: dict, bins=20, title="", xlabel="", ylabel="count") -> str:
    """Overlaid step histograms sharing one set of bin edges."""
    data = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in groups.items()}
    values = np.concatenate(list(data.values()))
    edges = np.histogram_bin_edges(values, bins=bins)
    counts = {k: np.histogram(v, bins=edges)[0] for k, v in data.items()}
    top = max(int(c.max()) for c in counts.values()) if counts else 1
    ax = _Axes((edges[0], edges[-1]), (0.0, top))
    parts = _frame(ax, title, xlabel, ylabel)
    for k, (name, c) in enumerate(counts.items()):
        pts = [(edges[0], 0.0)]
        for i, h in enumerate(c):
            pts += [(edges[i], h), (edges[i + 1], h)]
        pts.append((edges[-1], 0.0))
        path = " ".join(f"{ax.px(a):.1f},{ax.py(b):.1f}" for a, b in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{COLORS[k % len(COLORS)]}" stroke-width="1.5"/>')
    parts += _legend(counts)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(text: str, path):
    with open(path, "w") as f:
        f.write(text)
