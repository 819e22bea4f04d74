"""Tiny SVG plotter: scatter, line and histogram layers on one pair of axes.

Output depends only on the data, so repeated runs give identical files.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, target: int = 5) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.array([lo])
    raw = span / target
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


class Figure:
    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = "",
                 width: int = 480, height: int = 360):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.layers: list[tuple] = []
        self.margin = (60, 20, 40, 50)  # left, right, top, bottom

    def _color(self, color):
        return color or PALETTE[len(self.layers) % len(PALETTE)]

    def scatter(self, x, y, label: str = "", color: str | None = None, size: float = 1.5, alpha: float = 0.5):
        self.layers.append(("scatter", np.asarray(x, float), np.asarray(y, float), label, self._color(color),
                            {"size": size, "alpha": alpha}))
        return self

    def line(self, x, y, label: str = "", color: str | None = None, dash: bool = False):
        self.layers.append(("line", np.asarray(x, float), np.asarray(y, float), label, self._color(color),
                            {"dash": dash}))
        return self

    def hist(self, data, bins: int = 50, range_=None, label: str = "", color: str | None = None,
             density: bool = True):
        counts, edges = np.histogram(np.asarray(data, float), bins=bins, range=range_, density=density)
        self.layers.append(("hist", edges, counts, label, self._color(color), {}))
        return self

    def _limits(self):
        xs, ys = [], []
        for kind, x, y, *_ in self.layers:
            xs.append(x[np.isfinite(x)])
            ys.append(y[np.isfinite(y)])
            if kind == "hist":
                ys.append(np.zeros(1))
        x = np.concatenate(xs) if xs else np.zeros(1)
        y = np.concatenate(ys) if ys else np.zeros(1)
        lims = []
        for v in (x, y):
            lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 1.0)
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.04 * (hi - lo)
            lims.append((lo - pad, hi + pad))
        return lims

    def render(self) -> str:
        (x0, x1), (y0, y1) = self._limits()
        ml, mr, mt, mb = self.margin
        pw, ph = self.width - ml - mr, self.height - mt - mb

        def px(v):
            return ml + (np.asarray(v) - x0) / (x1 - x0) * pw

        def py(v):
            return mt + ph - (np.asarray(v) - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'font-family="sans-serif" font-size="11">',
               f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
        for t in _ticks(x0, x1):
            X = _fmt(px(t))
            out.append(f'<line x1="{X}" y1="{mt + ph}" x2="{X}" y2="{mt + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{X}" y="{mt + ph + 15}" text-anchor="middle">{t:.3g}</text>')
        for t in _ticks(y0, y1):
            Y = _fmt(py(t))
            out.append(f'<line x1="{ml - 4}" y1="{Y}" x2="{ml}" y2="{Y}" stroke="black"/>')
            out.append(f'<text x="{ml - 6}" y="{Y}" text-anchor="end" dominant-baseline="middle">{t:.3g}</text>')
        for kind, x, y, label, color, opts in self.layers:
            if kind == "scatter":
                r = opts["size"]
                for a, b in zip(px(x), py(y)):
                    out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{r}" fill="{color}" '
                               f'fill-opacity="{opts["alpha"]}"/>')
            elif kind == "line":
                pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x), py(y)))
                dash = ' stroke-dasharray="5,3"' if opts["dash"] else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            else:
                base = py(0.0)
                for lo, hi, c in zip(x[:-1], x[1:], y):
                    top = py(c)
                    out.append(f'<rect x="{_fmt(px(lo))}" y="{_fmt(top)}" width="{_fmt(px(hi) - px(lo))}" '
                               f'height="{_fmt(base - top)}" fill="{color}" fill-opacity="0.4"/>')
        legend = [(lab, col) for _, _, _, lab, col, _ in self.layers if lab]
        for i, (lab, col) in enumerate(legend):
            yy = mt + 12 + 14 * i
            out.append(f'<rect x="{ml + pw - 110}" y="{yy - 8}" width="10" height="10" fill="{col}"/>')
            out.append(f'<text x="{ml + pw - 96}" y="{yy}">{escape(lab)}</text>')
        out.append(f'<text x="{self.width / 2}" y="{mt - 14}" text-anchor="middle" font-size="13">'
                   f'{escape(self.title)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{self.height - 8}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {mt + ph / 2})">{escape(self.ylabel)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.render())
