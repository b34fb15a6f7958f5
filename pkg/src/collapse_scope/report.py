"""The four scan figures, written as standalone SVG files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NothingToPlot
from .scan import MIN_SIGNAL, CollapseSpectrum, DualityReport, ScanTable
from .svg import Figure, rank_color
from .theory import ScanPrediction

FIGURE_NAMES = ("order_parameters.svg", "truncation.svg", "duality.svg", "diagnostics.svg")

PANEL_W, PANEL_H = 260, 200
LEFT, TOP, GAP = 70, 50, 80


def _panel_x(i: int) -> float:
    return LEFT + i * (PANEL_W + GAP)


def _fig(n_panels: int, title: str) -> Figure:
    return Figure(LEFT + n_panels * (PANEL_W + GAP) - GAP + 30, TOP + PANEL_H + 75, title)


def _ranks_to_plot(table: ScanTable, max_rank: int | None) -> int:
    if max_rank is not None:
        return max(1, min(max_rank, table.n_ranks))
    ever = np.any(table["signal_fraction"] > MIN_SIGNAL, axis=0)
    return max(1, int(np.sum(ever)))


def _legend(fig: Figure, k_max: int) -> None:
    fig.add_legend([(f"rank {k}", rank_color(k)) for k in range(1, k_max + 1)])


def order_parameter_figure(table: ScanTable, collapse: CollapseSpectrum | None, k_max: int) -> Figure:
    fig = _fig(3, "Order parameters across the temperature scan")
    t = table.temperatures
    mu = fig.add_axes(_panel_x(0), TOP, PANEL_W, PANEL_H, title="mean squared posterior mean", xlabel="T", xlog=True)
    m2 = fig.add_axes(
        _panel_x(1), TOP, PANEL_W, PANEL_H, title="signal fraction M^2", xlabel="T", xlog=True, ylim=(-0.05, 1.05)
    )
    lv = fig.add_axes(_panel_x(2), TOP, PANEL_W, PANEL_H, title="mean log posterior variance", xlabel="T", xlog=True)
    fits = {} if collapse is None else collapse.thresholds()
    dense = np.geomspace(t.min(), t.max(), 200)
    for k in range(1, k_max + 1):
        c = rank_color(k)
        mu.line(t, table["mu_sq"][:, k - 1], c, label=f"rank {k}")
        m2.line(t, table["signal_fraction"][:, k - 1], c, label=f"rank {k}")
        m2.scatter(t, table["signal_fraction"][:, k - 1], c, radius=2)
        lv.line(t, table["logvar_mean"][:, k - 1], c, label=f"rank {k}")
        if k in fits:
            m2.line(dense, np.maximum(1 - dense / fits[k], 0), c, width=1, dash="4 3", label=f"fit rank {k}")
    _legend(fig, k_max)
    return fig


def truncation_figure(
    temperatures: np.ndarray,
    curves: np.ndarray,
    reference: Sequence[float] | None,
) -> Figure:
    fig = _fig(2, "Truncated distortion and best distortion by rank")
    left = fig.add_axes(
        _panel_x(0), TOP, PANEL_W, PANEL_H, title="D~_k(T), top-k ranked latents", xlabel="T", xlog=True, ylog=True
    )
    k_max = curves.shape[1] - 1
    for k in range(k_max + 1):
        left.line(temperatures, curves[:, k], rank_color(k) if k else "#000000", label=f"k={k}")
    right = fig.add_axes(_panel_x(1), TOP, PANEL_W, PANEL_H, title="best D~ vs kept rank", xlabel="k", ylog=True)
    ks = np.arange(k_max + 1)
    best = curves.min(axis=0)
    right.line(ks, best, "#1f77b4", label="measured")
    right.scatter(ks, best, "#1f77b4")
    if reference is not None:
        ref = np.asarray(reference, float)
        pca = 1.0 - np.concatenate([[0.0], np.cumsum(ref)])[: k_max + 1]
        right.line(np.arange(pca.size), pca, "#000000", width=1, dash="4 3", label="PCA 1 - cumulative")
    fig.add_legend([("measured", "#1f77b4"), ("PCA", "#000000")])
    return fig


def duality_figure(report: DualityReport | None) -> Figure:
    fig = _fig(1, "Utility vs collapse threshold")
    ax = fig.add_axes(_panel_x(0), TOP, PANEL_W, PANEL_H, xlabel="T_k (fitted)", ylabel="Delta D~_k", xlog=True, ylog=True)
    pts = [] if report is None else [r for r in report.rows if r.threshold is not None and r.utility is not None]
    vals = [v for r in pts for v in (r.threshold, r.utility) if v > 0]
    lo, hi = (min(vals) / 2, max(vals) * 2) if vals else (1e-3, 1.0)
    ax.xlim = ax.ylim = (lo, hi)
    ax.line([lo, hi], [lo, hi], "#000000", width=1, dash="4 3", label="y = x")
    for r in pts:
        ax.scatter([r.threshold], [r.utility], rank_color(r.rank), radius=4 if r.reliable else 2.5, label=f"rank {r.rank}")
    _legend(fig, max((r.rank for r in pts), default=0))
    return fig


def diagnostics_figure(table: ScanTable, k_max: int) -> Figure:
    fig = _fig(2, "Posterior scale and Jensen gap")
    t = table.temperatures
    a2 = fig.add_axes(_panel_x(0), TOP, PANEL_W, PANEL_H, title="scale A^2", xlabel="T", xlog=True)
    jg = fig.add_axes(_panel_x(1), TOP, PANEL_W, PANEL_H, title="Jensen gap J", xlabel="T", xlog=True)
    for k in range(1, k_max + 1):
        a2.line(t, table["scale"][:, k - 1], rank_color(k), label=f"rank {k}")
        jg.line(t, table["jensen_gap"][:, k - 1], rank_color(k), label=f"rank {k}")
    a2.line([t.min(), t.max()], [1, 1], "#000000", width=1, dash="4 3")
    _legend(fig, k_max)
    return fig


def render_figures(
    out_dir: str | Path,
    table: ScanTable | None,
    prediction: ScanPrediction | None = None,
    reference: Sequence[float] | None = None,
    collapse: CollapseSpectrum | None = None,
    duality: DualityReport | None = None,
    truncation: tuple[np.ndarray, np.ndarray] | None = None,
    max_rank: int | None = None,
) -> list[Path]:
    """Write the four figures into `out_dir` and return their paths.

    `reference` is lambda_k / V. When `truncation` is missing the truncation
    figure falls back to the predicted staircase (if a prediction is given).
    """
    if table is None or table.temperatures.size == 0:
        raise NothingToPlot("no scan results to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k_max = _ranks_to_plot(table, max_rank)
    if truncation is None:
        if prediction is None:
            raise NothingToPlot("truncation figure needs truncation curves or a prediction")
        truncation = (prediction.temperatures, prediction.distortion[:, None])
    figs = (
        order_parameter_figure(table, collapse, k_max),
        truncation_figure(*truncation, reference),
        duality_figure(duality),
        diagnostics_figure(table, k_max),
    )
    return [fig.save(out / name) for fig, name in zip(figs, FIGURE_NAMES)]
