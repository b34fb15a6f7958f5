"""Minimal deterministic SVG line/scatter plots with linear or log axes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)

LEGEND_STEP, LEGEND_ROW = 70, 14


def rank_color(rank: int) -> str:
    return PALETTE[(rank - 1) % len(PALETTE)]


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        exp = math.floor(math.log10(abs(v)))
        mant = v / 10**exp
        return f"1e{exp}" if math.isclose(mant, 1.0) else f"{mant:.3g}e{exp}"
    return f"{v:.3g}"


def linear_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = next(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step - 1e-9)
    ticks = []
    k = first
    while k * step <= hi + 1e-9 * step:
        ticks.append(round(k * step, 12))
        k += 1
    return ticks


def log_ticks(lo: float, hi: float) -> list[float]:
    a, b = math.ceil(math.log10(lo) - 1e-9), math.floor(math.log10(hi) + 1e-9)
    stride = max(1, math.ceil((b - a + 1) / 7))
    return [10.0**e for e in range(a, b + 1, stride)]


@dataclass
class Axes:
    x: float
    y: float
    width: float
    height: float
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    xlog: bool = False
    ylog: bool = False
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    _series: list = field(default_factory=list)

    def line(self, xs, ys, color: str = "#000000", width: float = 1.5, dash: str | None = None, label: str = ""):
        self._series.append(("line", np.asarray(xs, float), np.asarray(ys, float), color, width, dash, label))

    def scatter(self, xs, ys, color: str = "#000000", radius: float = 3.0, label: str = ""):
        self._series.append(("scatter", np.asarray(xs, float), np.asarray(ys, float), color, radius, None, label))

    def _valid(self, xs, ys):
        ok = np.isfinite(xs) & np.isfinite(ys)
        if self.xlog:
            ok &= xs > 0
        if self.ylog:
            ok &= ys > 0
        return ok

    def _limits(self):
        xs, ys = [], []
        for _, x, y, *_ in self._series:
            ok = self._valid(x, y)
            xs.append(x[ok])
            ys.append(y[ok])
        xs = np.concatenate(xs) if xs else np.array([])
        ys = np.concatenate(ys) if ys else np.array([])

        def pad(vals, log, given):
            if given is not None:
                return given
            if vals.size == 0:
                return (0.1, 1.0) if log else (0.0, 1.0)
            lo, hi = float(vals.min()), float(vals.max())
            if log:
                lo, hi = math.log10(lo), math.log10(hi)
            if hi == lo:
                lo, hi = lo - 0.5, hi + 0.5
            margin = 0.05 * (hi - lo)
            lo, hi = lo - margin, hi + margin
            return (10**lo, 10**hi) if log else (lo, hi)

        return pad(xs, self.xlog, self.xlim), pad(ys, self.ylog, self.ylim)

    def render(self) -> list[str]:
        (x0, x1), (y0, y1) = self._limits()

        def tx(v):
            if self.xlog:
                f = (np.log10(v) - math.log10(x0)) / (math.log10(x1) - math.log10(x0))
            else:
                f = (v - x0) / (x1 - x0)
            return self.x + f * self.width

        def ty(v):
            if self.ylog:
                f = (np.log10(v) - math.log10(y0)) / (math.log10(y1) - math.log10(y0))
            else:
                f = (v - y0) / (y1 - y0)
            return self.y + self.height - f * self.height

        out = [
            f'<rect x="{_num(self.x)}" y="{_num(self.y)}" width="{_num(self.width)}" '
            f'height="{_num(self.height)}" fill="none" stroke="#000000" stroke-width="1"/>'
        ]
        for t in log_ticks(x0, x1) if self.xlog else linear_ticks(x0, x1):
            px = tx(t)
            bottom = self.y + self.height
            out.append(f'<line x1="{_num(px)}" y1="{_num(bottom)}" x2="{_num(px)}" y2="{_num(bottom + 4)}" stroke="#000000"/>')
            out.append(f'<text x="{_num(px)}" y="{_num(bottom + 16)}" font-size="10" text-anchor="middle">{_label(t)}</text>')
        for t in log_ticks(y0, y1) if self.ylog else linear_ticks(y0, y1):
            py = ty(t)
            out.append(f'<line x1="{_num(self.x - 4)}" y1="{_num(py)}" x2="{_num(self.x)}" y2="{_num(py)}" stroke="#000000"/>')
            out.append(f'<text x="{_num(self.x - 6)}" y="{_num(py + 3)}" font-size="10" text-anchor="end">{_label(t)}</text>')
        cx = self.x + self.width / 2
        if self.title:
            out.append(f'<text x="{_num(cx)}" y="{_num(self.y - 8)}" font-size="12" text-anchor="middle">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_num(cx)}" y="{_num(self.y + self.height + 32)}" font-size="11" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            cy = self.y + self.height / 2
            lx = self.x - 46
            out.append(
                f'<text x="{_num(lx)}" y="{_num(cy)}" font-size="11" text-anchor="middle" '
                f'transform="rotate(-90 {_num(lx)} {_num(cy)})">{escape(self.ylabel)}</text>'
            )

        clip = f"clip{int(self.x)}_{int(self.y)}"
        out.append(
            f'<clipPath id="{clip}"><rect x="{_num(self.x)}" y="{_num(self.y)}" '
            f'width="{_num(self.width)}" height="{_num(self.height)}"/></clipPath>'
        )
        out.append(f'<g clip-path="url(#{clip})">')
        for kind, xs, ys, color, size, dash, label in self._series:
            ok = self._valid(xs, ys)
            title = f"<title>{escape(label)}</title>" if label else ""
            if kind == "scatter":
                for a, b in zip(tx(xs[ok]), ty(ys[ok])):
                    out.append(f'<circle cx="{_num(a)}" cy="{_num(b)}" r="{_num(size)}" fill="{color}">{title}</circle>')
                continue
            # break the polyline wherever a point is missing
            runs, cur = [], []
            for i in range(xs.size):
                if ok[i]:
                    cur.append(i)
                elif cur:
                    runs.append(cur)
                    cur = []
            if cur:
                runs.append(cur)
            style = f' stroke-dasharray="{dash}"' if dash else ""
            for run in runs:
                pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(tx(xs[run]), ty(ys[run])))
                out.append(
                    f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{_num(size)}"{style}>{title}</polyline>'
                )
        out.append("</g>")
        return out


class Figure:
    def __init__(self, width: float, height: float, title: str = ""):
        self.width = width
        self.height = height
        self.title = title
        self.axes: list[Axes] = []
        self.legend: list[tuple[str, str]] = []

    def add_axes(self, x: float, y: float, width: float, height: float, **kw) -> Axes:
        ax = Axes(x, y, width, height, **kw)
        self.axes.append(ax)
        return ax

    def add_legend(self, entries: Sequence[tuple[str, str]]) -> None:
        self.legend = list(entries)

    def to_svg(self) -> str:
        per_row = max(1, int((self.width - 12) // LEGEND_STEP))
        rows = -(-len(self.legend) // per_row)
        height = self.height + LEGEND_ROW * max(rows - 1, 0)
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(self.width)}" height="{_num(height)}" '
            f'viewBox="0 0 {_num(self.width)} {_num(height)}" font-family="sans-serif">',
            f'<rect width="{_num(self.width)}" height="{_num(height)}" fill="#ffffff"/>',
        ]
        if self.title:
            parts.append(f'<text x="{_num(self.width / 2)}" y="18" font-size="14" text-anchor="middle">{escape(self.title)}</text>')
        for ax in self.axes:
            parts.extend(ax.render())
        for i, (label, color) in enumerate(self.legend):
            x = 12 + LEGEND_STEP * (i % per_row)
            y = self.height - 10 + LEGEND_ROW * (i // per_row)
            parts.append(f'<rect x="{_num(x)}" y="{_num(y - 8)}" width="10" height="10" fill="{color}"/>')
            parts.append(f'<text x="{_num(x + 14)}" y="{_num(y + 1)}" font-size="10">{escape(label)}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_svg())
        return path
