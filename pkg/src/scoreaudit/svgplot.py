"""Minimal static SVG figures with no plotting dependency.

Each figure is one self-contained <svg> element. Coordinates are emitted
with fixed two-decimal precision and nothing here reads the clock or a
global RNG, so the same data always renders to the same bytes. That is a
hard requirement for the command line tool, whose outputs must be
byte-identical across reruns.

Only the handful of chart types the audit report needs are supported:
scatter, polyline, vertical bars, bubbles, and step functions.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

__all__ = ["Figure", "PALETTE", "nice_ticks"]

PALETTE = (
    "#4878a8",  # blue
    "#e07b39",  # orange
    "#5d9e52",  # green
    "#b5534e",  # red
    "#8172b3",  # purple
    "#937860",  # brown
)

GRAY = "#9aa0a6"


def _num(v: float) -> str:
    """Fixed-precision pixel coordinate; avoids repr jitter in the output."""
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _label(v: float) -> str:
    return f"{v:g}"


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] at a 1/2/5 step."""
    if not math.isfinite(lo) or not math.isfinite(hi):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = 10 * mag
    for mult in (1, 2, 5):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


class Figure:
    """One chart. Add data, then render() to a string.

    Data limits default to the span of everything added, padded 5%; call
    set_xlim/set_ylim before adding data to pin them instead.
    """

    def __init__(self, width: int = 640, height: int = 420, title: str = "",
                 xlabel: str = "", ylabel: str = ""):
        self.width = width
        self.height = height
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.left, self.right, self.top, self.bottom = 62, 18, 36, 50
        self._xlim: Optional[tuple[float, float]] = None
        self._ylim: Optional[tuple[float, float]] = None
        self._xticks: Optional[list[tuple[float, str]]] = None
        self._xs: list[float] = []
        self._ys: list[float] = []
        self._shapes: list[tuple] = []
        self._legend: list[tuple[str, str]] = []

    # -- limits -------------------------------------------------------

    def set_xlim(self, lo: float, hi: float) -> None:
        self._xlim = (float(lo), float(hi))

    def set_ylim(self, lo: float, hi: float) -> None:
        self._ylim = (float(lo), float(hi))

    def set_xticks(self, positions: Sequence[float], labels: Sequence[str]) -> None:
        """Categorical x axis: label these positions instead of numeric ticks."""
        self._xticks = list(zip(positions, labels))

    def _limits(self, fixed, values) -> tuple[float, float]:
        if fixed is not None:
            return fixed
        finite = [v for v in values if math.isfinite(v)]
        if not finite:
            return (0.0, 1.0)
        lo, hi = min(finite), max(finite)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        return (lo - pad, hi + pad)

    # -- data elements (recorded now, projected at render time) --------

    def scatter(self, xs: Sequence[float], ys: Sequence[float], color: str = PALETTE[0],
                r: float = 2.5, opacity: float = 0.55, label: str = "") -> None:
        self._xs.extend(xs)
        self._ys.extend(ys)
        self._shapes.append(("scatter", tuple(xs), tuple(ys), color, r, opacity))
        if label:
            self._legend.append((label, color))

    def line(self, xs: Sequence[float], ys: Sequence[float], color: str = PALETTE[3],
             width: float = 2.0, dash: str = "", label: str = "") -> None:
        self._xs.extend(xs)
        self._ys.extend(ys)
        self._shapes.append(("line", tuple(xs), tuple(ys), color, width, dash))
        if label:
            self._legend.append((label, color))

    def bars(self, xs: Sequence[float], heights: Sequence[float], width: float,
             color: str = PALETTE[0], label: str = "") -> None:
        """Vertical bars from 0 to each height, centered on xs."""
        self._xs.extend([x - width / 2 for x in xs])
        self._xs.extend([x + width / 2 for x in xs])
        self._ys.extend(heights)
        self._ys.append(0.0)
        self._shapes.append(("bars", tuple(xs), tuple(heights), width, color))
        if label:
            self._legend.append((label, color))

    def bubbles(self, xs: Sequence[float], ys: Sequence[float], sizes: Sequence[float],
                color: str = PALETTE[0], max_r: float = 14.0, label: str = "") -> None:
        """Scatter with radius proportional to sqrt(size)."""
        self._xs.extend(xs)
        self._ys.extend(ys)
        top = max(sizes) if len(sizes) else 1.0
        radii = tuple(max_r * math.sqrt(s / top) if top > 0 else 1.0 for s in sizes)
        self._shapes.append(("bubbles", tuple(xs), tuple(ys), radii, color))
        if label:
            self._legend.append((label, color))

    def steps(self, xs: Sequence[float], ys: Sequence[float], color: str = PALETTE[3],
              width: float = 2.0, label: str = "") -> None:
        """Left-continuous step path through (x_i, y_i)."""
        px, py = [], []
        for i, (x, y) in enumerate(zip(xs, ys)):
            if i:
                px.append(x)
                py.append(py[-1])
            px.append(x)
            py.append(y)
        self.line(px, py, color=color, width=width, label=label)

    # -- rendering ------------------------------------------------------

    def _proj(self):
        x0, x1 = self._limits(self._xlim, self._xs)
        y0, y1 = self._limits(self._ylim, self._ys)
        iw = self.width - self.left - self.right
        ih = self.height - self.top - self.bottom

        def px(x: float) -> float:
            return self.left + (x - x0) / (x1 - x0) * iw

        def py(y: float) -> float:
            return self.top + (y1 - y) / (y1 - y0) * ih

        return px, py, (x0, x1), (y0, y1)

    def _frame(self, out: list, px, py, xlim, ylim) -> None:
        l, t = self.left, self.top
        r, b = self.width - self.right, self.height - self.bottom
        if self._xticks is not None:
            xticks = [(pos, lab) for pos, lab in self._xticks if xlim[0] <= pos <= xlim[1]]
        else:
            xticks = [(v, _label(v)) for v in nice_ticks(*xlim) if xlim[0] <= v <= xlim[1]]
        for xt, lab in xticks:
            x = _num(px(xt))
            if self._xticks is None:
                out.append(f'<line x1="{x}" y1="{t}" x2="{x}" y2="{b}" stroke="#e3e3e3"/>')
            out.append(f'<text x="{x}" y="{b + 16}" font-size="11" text-anchor="middle" '
                       f'fill="#444">{lab}</text>')
        for yt in nice_ticks(*ylim):
            if not ylim[0] <= yt <= ylim[1]:
                continue
            y = _num(py(yt))
            out.append(f'<line x1="{l}" y1="{y}" x2="{r}" y2="{y}" stroke="#e3e3e3"/>')
            out.append(f'<text x="{l - 6}" y="{y}" font-size="11" text-anchor="end" '
                       f'dy="4" fill="#444">{_label(yt)}</text>')
        out.append(f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" '
                   f'fill="none" stroke="#777"/>')
        if self.title:
            out.append(f'<text x="{self.width // 2}" y="20" font-size="14" '
                       f'text-anchor="middle" fill="#111">{self.title}</text>')
        if self.xlabel:
            out.append(f'<text x="{(l + r) // 2}" y="{self.height - 12}" font-size="12" '
                       f'text-anchor="middle" fill="#111">{self.xlabel}</text>')
        if self.ylabel:
            out.append(f'<text x="16" y="{(t + b) // 2}" font-size="12" text-anchor="middle" '
                       f'fill="#111" transform="rotate(-90 16 {(t + b) // 2})">{self.ylabel}</text>')

    def _clip(self, x: float, y: float, xlim, ylim) -> bool:
        return xlim[0] <= x <= xlim[1] and ylim[0] <= y <= ylim[1]

    def render(self, comment: str = "") -> str:
        px, py, xlim, ylim = self._proj()
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" viewBox="0 0 {self.width} {self.height}" '
               f'font-family="sans-serif">']
        if comment:
            out.append(f"<!-- {comment} -->")
        out.append(f'<rect width="{self.width}" height="{self.height}" fill="white"/>')
        self._frame(out, px, py, xlim, ylim)
        for shape in self._shapes:
            kind = shape[0]
            if kind == "scatter":
                _, xs, ys, color, r, opacity = shape
                for x, y in zip(xs, ys):
                    if not self._clip(x, y, xlim, ylim):
                        continue
                    out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="{_num(r)}" '
                               f'fill="{color}" fill-opacity="{opacity:g}"/>')
            elif kind == "line":
                _, xs, ys, color, width, dash = shape
                pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in zip(xs, ys))
                extra = f' stroke-dasharray="{dash}"' if dash else ""
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                           f'stroke-width="{width:g}"{extra}/>')
            elif kind == "bars":
                _, xs, hs, width, color = shape
                y_zero = py(max(ylim[0], min(0.0, ylim[1])))
                for x, h in zip(xs, hs):
                    y = py(min(max(h, ylim[0]), ylim[1]))
                    top = min(y, y_zero)
                    out.append(f'<rect x="{_num(px(x - width / 2))}" y="{_num(top)}" '
                               f'width="{_num(px(x + width / 2) - px(x - width / 2))}" '
                               f'height="{_num(abs(y_zero - y))}" fill="{color}" '
                               f'fill-opacity="0.8"/>')
            elif kind == "bubbles":
                _, xs, ys, radii, color = shape
                for x, y, r in zip(xs, ys, radii):
                    if not self._clip(x, y, xlim, ylim):
                        continue
                    out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="{_num(r)}" '
                               f'fill="{color}" fill-opacity="0.35" stroke="{color}"/>')
        if self._legend:
            lx = self.width - self.right - 150
            ly = self.top + 8
            for i, (label, color) in enumerate(self._legend):
                y = ly + 16 * i
                out.append(f'<rect x="{lx}" y="{y}" width="10" height="10" fill="{color}"/>')
                out.append(f'<text x="{lx + 15}" y="{y + 9}" font-size="11" '
                           f'fill="#111">{label}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
