"""Closed-form one-mode equilibria, the Landau expansion, and multi-mode predictions.

A single data direction with variance lambda, seen at reduced temperature
tau = beta * sigma_dec^2 / lambda, has an active branch for tau < 1 with signal
fraction 1 - tau, and is collapsed (posterior = prior) for tau >= 1. For
Gaussian data the full problem splits into one such problem per PCA direction
with tau_k = T / (lambda_k / V).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidTau, LogDomainError, ValidationError
from .spectra import DataSpectrum
from .tables import write_rows

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (math.isfinite(tau) and tau > 0):
        raise InvalidTau(f"tau must be positive and finite, got {tau}")
    return tau


@dataclass(frozen=True)
class OneModeSolution:
    tau: float
    signal_fraction: float
    var_mean: float
    scale: float
    rate: float
    distortion_ratio: float  # D / D0
    collapsed: bool

    @property
    def logvar_mean(self) -> float:
        return math.log(self.var_mean)


def one_mode_solution(tau: float) -> OneModeSolution:
    tau = _check_tau(tau)
    if tau >= 1.0:
        return OneModeSolution(tau, 0.0, 1.0, 1.0, 0.0, 1.0, True)
    return OneModeSolution(tau, 1.0 - tau, tau, 1.0, 0.5 * math.log(1.0 / tau), tau, False)


def landau_coefficients(tau: float) -> tuple[float, float]:
    """Coefficients of M^2 and (M^2)^2 in the reduced loss expanded about M^2 = 0."""
    tau = _check_tau(tau)
    return tau - 1.0, tau / 2.0


def reduced_loss(m2: float, a2: float, tau: float) -> float:
    """Decoder-eliminated one-mode loss in units of the collapsed distortion D0."""
    tau = _check_tau(tau)
    if not m2 < 1.0:
        raise LogDomainError(f"signal fraction must be < 1, got {m2}")
    if m2 < 0:
        raise ValidationError(f"signal fraction must be >= 0, got {m2}")
    if not a2 > 0:
        raise LogDomainError(f"scale must be positive, got {a2}")
    return (1.0 - m2) + tau * (a2 - math.log(a2) - math.log(1.0 - m2) - 1.0)


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    # endpoints are candidates too: the minimum may sit on the boundary
    return min((lo, hi, 0.5 * (lo + hi)), key=f)


def one_mode_brute_force(tau: float, resolution: int = 400, tol: float = 1e-9) -> tuple[float, float, float]:
    """Grid search of `reduced_loss` followed by golden-section refinement.

    Searches m2 in [0, 1 - 1e-6] and a2 in [0.1, 10]. Knows nothing about the
    analytic branch; used to check it.
    """
    tau = _check_tau(tau)
    if resolution < 100:
        raise ValidationError(f"resolution must be >= 100, got {resolution}")
    m2_max = 1.0 - 1e-6
    m2_grid = np.linspace(0.0, m2_max, resolution)
    a2_grid = np.geomspace(0.1, 10.0, resolution)
    values = (1.0 - m2_grid)[:, None] + tau * (
        a2_grid[None, :] - np.log(a2_grid)[None, :] - np.log1p(-m2_grid)[:, None] - 1.0
    )
    i, j = np.unravel_index(np.argmin(values), values.shape)

    def bracket(grid, k):
        return grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]

    m2_best, a2_best = m2_grid[i], a2_grid[j]
    # alternate 1-D refinements; two passes settle any coupling
    for _ in range(2):
        m2_best = _golden_section(lambda m: reduced_loss(m, a2_best, tau), *bracket(m2_grid, i), tol)
        a2_best = _golden_section(lambda a: reduced_loss(m2_best, a, tau), *bracket(a2_grid, j), tol)
    return m2_best, a2_best, reduced_loss(m2_best, a2_best, tau)


@dataclass(frozen=True, eq=False)
class ScanPrediction:
    temperatures: np.ndarray  # (n_T,)
    weights: np.ndarray  # lambda_k / V, (K,)
    signal_fraction: np.ndarray  # (n_T, K)
    var_mean: np.ndarray
    rate: np.ndarray
    distortion: np.ndarray  # total normalized distortion per T
    total_rate: np.ndarray
    beta_thresholds: np.ndarray  # lambda_k / sigma_dec^2

    @property
    def logvar_mean(self) -> np.ndarray:
        return np.log(self.var_mean)

    @property
    def active_count(self) -> np.ndarray:
        return np.sum(self.signal_fraction > 0, axis=1)


def predict_scan(spectrum: DataSpectrum, temperatures, dec_var: float = 1.0) -> ScanPrediction:
    """Per-mode one-mode solutions at tau_k = T / (lambda_k / V), summed over modes."""
    temps = np.asarray(getattr(temperatures, "temperatures", temperatures), dtype=float)
    if temps.size == 0 or np.any(temps <= 0):
        raise ValidationError("temperatures must be positive")
    weights = np.asarray(spectrum.normalized_weights, dtype=float)
    live = weights > 0
    m2 = np.zeros((temps.size, weights.size))
    var = np.ones_like(m2)
    rate = np.zeros_like(m2)
    for k in np.flatnonzero(live):
        for t, temp in enumerate(temps):
            sol = one_mode_solution(temp / weights[k])
            m2[t, k], var[t, k], rate[t, k] = sol.signal_fraction, sol.var_mean, sol.rate
    active = m2 > 0
    distortion = np.where(active, temps[:, None], weights[None, :]).sum(axis=1)
    return ScanPrediction(
        temperatures=temps,
        weights=weights,
        signal_fraction=m2,
        var_mean=var,
        rate=rate,
        distortion=distortion,
        total_rate=rate.sum(axis=1),
        beta_thresholds=np.asarray(spectrum.eigenvalues, dtype=float) / dec_var,
    )


def write_prediction_csv(pred: ScanPrediction, path: str | Path) -> None:
    """One row per (T, rank); per-T totals are repeated on each row."""
    header = ["T", "rank", "signal_fraction", "var_mean", "rate_k", "total_distortion", "total_rate"]
    rows = (
        (
            temp,
            k + 1,
            pred.signal_fraction[t, k],
            pred.var_mean[t, k],
            pred.rate[t, k],
            pred.distortion[t],
            pred.total_rate[t],
        )
        for t, temp in enumerate(pred.temperatures)
        for k in range(pred.weights.size)
    )
    write_rows(path, header, rows)
