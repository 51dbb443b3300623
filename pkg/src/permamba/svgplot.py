"""Self-contained SVG rendering for the pipeline's figure-class outputs.

Covers exactly what those figures need: scatter markers, polylines, an
optional identity reference, linear or decade-log axes with tick labels, and
a legend. Rendering is pure text generation, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["Series", "render_figure", "nice_ticks"]

_PALETTE = ("#1f6fb2", "#d1495b", "#3a7d44", "#8d5a97", "#c77f2e")

_WIDTH = 720
_HEIGHT = 540
_MARGIN_LEFT = 78
_MARGIN_RIGHT = 24
_MARGIN_TOP = 42
_MARGIN_BOTTOM = 64


@dataclass(frozen=True)
class Series:
    points: tuple[tuple[float, float], ...]
    label: str = ""
    draw_line: bool = False
    draw_markers: bool = True


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions covering [lo, hi] at a 1/2/5 decade step."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError(f"tick range [{lo}, {hi}] is not finite")
    if hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        pad = abs(lo) * 0.5 or 1.0
        lo, hi = lo - pad, hi + pad
    raw_step = (hi - lo) / max(target, 2)
    magnitude = 10.0 ** math.floor(math.log10(raw_step))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * magnitude
        if (hi - lo) / step <= target + 1:
            break
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    value = first
    while value <= hi + step * 1e-9:
        ticks.append(0.0 if abs(value) < step * 1e-9 else value)
        value += step
    return ticks


def _fmt(value: float) -> str:
    return f"{value:g}"


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


class _Axis:
    """Maps one data coordinate to pixels, linearly or in log10."""

    def __init__(self, values, log: bool, name: str) -> None:
        if log and any(v <= 0 for v in values):
            raise ConfigError(f"log {name} axis requires positive values")
        self.log = log
        xs = [math.log10(v) for v in values] if log else list(values)
        lo, hi = min(xs), max(xs)
        if log:
            # Decade ticks; widen to whole decades so endpoints get labels.
            lo, hi = math.floor(lo), math.ceil(hi)
            if hi == lo:
                hi = lo + 1
            self.ticks = [(10.0 ** k, f"1e{k}") for k in range(int(lo), int(hi) + 1)]
        else:
            span = (hi - lo) or (abs(lo) * 0.5 or 1.0)
            lo, hi = lo - 0.05 * span, hi + 0.05 * span
            self.ticks = [(v, _fmt(v)) for v in nice_ticks(lo, hi)]
        self.lo, self.hi = lo, hi

    def unit(self, value: float) -> float:
        v = math.log10(value) if self.log else value
        return (v - self.lo) / (self.hi - self.lo)


def render_figure(series, *, title: str = "", x_label: str = "",
                  y_label: str = "", identity: bool = False,
                  log_x: bool = False, log_y: bool = False,
                  x_ticks=None) -> str:
    """Render series to an SVG document string.

    ``identity`` draws the y = x reference over the shared data range.
    ``x_ticks`` replaces computed ticks with explicit (value, label) pairs,
    which is how categorical axes are rendered.
    """
    series = [s if isinstance(s, Series) else Series(tuple(s)) for s in series]
    if not series or all(not s.points for s in series):
        raise ConfigError("nothing to plot: no points in any series")
    flat = [(x, y) for s in series for x, y in s.points]
    if any(not (math.isfinite(x) and math.isfinite(y)) for x, y in flat):
        raise ConfigError("plot data contains non-finite values")

    x_axis = _Axis([p[0] for p in flat], log_x, "x")
    y_axis = _Axis([p[1] for p in flat], log_y, "y")
    if x_ticks is not None:
        x_axis.ticks = [(float(v), str(label)) for v, label in x_ticks]

    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(value: float) -> float:
        return _MARGIN_LEFT + x_axis.unit(value) * plot_w

    def py(value: float) -> float:
        return _HEIGHT - _MARGIN_BOTTOM - y_axis.unit(value) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}" '
        f'font-family="Helvetica, Arial, sans-serif">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="#ffffff"/>',
    ]
    left, right = _MARGIN_LEFT, _WIDTH - _MARGIN_RIGHT
    top, bottom = _MARGIN_TOP, _HEIGHT - _MARGIN_BOTTOM

    for value, label in x_axis.ticks:
        if not (x_axis.lo <= (math.log10(value) if log_x else value) <= x_axis.hi):
            continue
        x = px(value)
        out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" '
                   f'y2="{top}" stroke="#e0e0e0" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{bottom + 20}" font-size="13" '
                   f'text-anchor="middle">{_escape(label)}</text>')
    for value, label in y_axis.ticks:
        if not (y_axis.lo <= (math.log10(value) if log_y else value) <= y_axis.hi):
            continue
        y = py(value)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{right}" '
                   f'y2="{y:.2f}" stroke="#e0e0e0" stroke-width="1"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="13" '
                   f'text-anchor="end">{_escape(label)}</text>')

    out.append(f'<rect x="{left}" y="{top}" width="{plot_w}" '
               f'height="{plot_h}" fill="none" stroke="#000000"/>')

    if identity:
        lo = max(x_axis.lo, y_axis.lo)
        hi = min(x_axis.hi, y_axis.hi)
        if hi > lo:
            a = (10.0 ** lo, 10.0 ** lo) if log_x and log_y else (lo, lo)
            b = (10.0 ** hi, 10.0 ** hi) if log_x and log_y else (hi, hi)
            out.append(f'<line x1="{px(a[0]):.2f}" y1="{py(a[1]):.2f}" '
                       f'x2="{px(b[0]):.2f}" y2="{py(b[1]):.2f}" '
                       f'stroke="#888888" stroke-dasharray="6 4" '
                       f'stroke-width="1.5" class="identity"/>')

    for index, s in enumerate(series):
        color = _PALETTE[index % len(_PALETTE)]
        if s.draw_line and len(s.points) > 1:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in s.points)
            out.append(f'<polyline points="{coords}" fill="none" '
                       f'stroke="{color}" stroke-width="2"/>')
        if s.draw_markers:
            for x, y in s.points:
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" '
                           f'r="3.5" fill="{color}" fill-opacity="0.75"/>')

    if title:
        out.append(f'<text x="{_WIDTH / 2:.0f}" y="26" font-size="17" '
                   f'text-anchor="middle">{_escape(title)}</text>')
    if x_label:
        out.append(f'<text x="{(left + right) / 2:.0f}" y="{_HEIGHT - 16}" '
                   f'font-size="15" text-anchor="middle">{_escape(x_label)}</text>')
    if y_label:
        out.append(f'<text x="22" y="{(top + bottom) / 2:.0f}" font-size="15" '
                   f'text-anchor="middle" transform="rotate(-90 22 '
                   f'{(top + bottom) / 2:.0f})">{_escape(y_label)}</text>')

    labeled = [(i, s.label) for i, s in enumerate(series) if s.label]
    for row, (index, label) in enumerate(labeled):
        color = _PALETTE[index % len(_PALETTE)]
        y = top + 14 + row * 18
        out.append(f'<rect x="{right - 130}" y="{y - 9}" width="12" '
                   f'height="12" fill="{color}"/>')
        out.append(f'<text x="{right - 112}" y="{y + 2}" font-size="13">'
                   f'{_escape(label)}</text>')

    out.append("</svg>")
    return "\n".join(out) + "\n"
