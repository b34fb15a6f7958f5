"""Temperature scans: per-T equilibrium training, mode ranking, threshold fits,
truncation utilities and the threshold/utility/PCA comparison table.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import NoActiveBranch, NothingToCompare, ScanPointFailed, ValidationError
from .model import OBSERVABLE_FIELDS, LossBreakdown, ModeObservables, VaeParams, expected_loss
from .model import posterior_observables, reconstruct_truncated
from .tables import read_records, write_rows
from .trainer import TrainConfig, TrainResult, train_to_equilibrium

log = logging.getLogger(__name__)

THREADS_ENV = "COLLAPSE_SCOPE_THREADS"
MIN_SIGNAL = 0.1
MAX_RESIDUAL = 0.05
MIN_RELIABLE_POINTS = 3


# --- grid -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScanGrid:
    temperatures: np.ndarray
    total_variance: float
    dec_var: float = 1.0

    def __post_init__(self):
        t = np.array(self.temperatures, dtype=float).ravel()
        if t.size < 3:
            raise ValidationError(f"a scan grid needs at least 3 temperatures, got {t.size}")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise ValidationError("temperatures must be positive and finite")
        if np.any(np.diff(t) >= 0):
            raise ValidationError("temperatures must be strictly descending")
        if not (self.total_variance > 0 and self.dec_var > 0):
            raise ValidationError("total_variance and dec_var must be positive")
        t.flags.writeable = False
        object.__setattr__(self, "temperatures", t)

    @property
    def betas(self) -> np.ndarray:
        return self.temperatures * self.total_variance / self.dec_var

    def __len__(self) -> int:
        return self.temperatures.size


def default_grid(
    weights: Sequence[float],
    total_variance: float,
    dec_var: float = 1.0,
    points_per_decade: int = 8,
    t_max: float | None = None,
    t_min: float | None = None,
) -> ScanGrid:
    """Log-spaced grid from 10 * max(lambda/V) down to min(lambda/V) / 100."""
    w = np.asarray(weights, dtype=float)
    w = w[w > 0]
    if w.size == 0 and (t_max is None or t_min is None):
        raise ValidationError("need positive spectrum weights or explicit t_max/t_min")
    hi = 10.0 * w.max() if t_max is None else float(t_max)
    lo = w.min() / 100.0 if t_min is None else float(t_min)
    if not (hi > lo > 0):
        raise ValidationError(f"need t_max > t_min > 0, got {hi} and {lo}")
    if points_per_decade < 1:
        raise ValidationError("points_per_decade must be >= 1")
    n = max(3, int(math.ceil(points_per_decade * math.log10(hi / lo))) + 1)
    return ScanGrid(np.geomspace(hi, lo, n), total_variance, dec_var)


# --- running --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScanPoint:
    temperature: float
    beta: float
    result: TrainResult
    observables: tuple[ModeObservables, ...]
    loss: LossBreakdown

    @property
    def params(self) -> VaeParams:
        return self.result.params


def _scan_workers() -> int:
    cpus = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return cpus
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, min(cap, cpus))


def _run_point(args, init: VaeParams | None = None) -> ScanPoint:
    train, val, test, temp, beta, v_train, cfg, m = args
    try:
        result = train_to_equilibrium(train, val, beta, cfg, m=m if init is None else None, init=init)
        obs = posterior_observables(result.params, test, beta)
        loss = expected_loss(result.params, test, beta, reference_variance=v_train)
    except Exception as exc:
        raise ScanPointFailed(temp, exc) from exc
    return ScanPoint(temp, beta, result, tuple(obs), loss)


def run_scan(
    train: Dataset,
    val: Dataset,
    test: Dataset,
    grid: ScanGrid,
    cfg: TrainConfig,
    m: int,
    workers: int | None = None,
    warm_start: bool = False,
) -> list[ScanPoint]:
    """Independent cold-start equilibrium training at every grid temperature.

    Observables and losses are measured on `test`; the reported temperature uses
    the grid's total variance (that of the training split). Points come back in
    grid order whatever the worker count. `warm_start` instead seeds each point
    from the previous one's parameters, which forces serial execution.
    """
    if m < 1:
        raise ValidationError(f"latent dimension must be >= 1, got {m}")
    jobs = [
        (train, val, test, float(t), float(b), grid.total_variance, cfg, m)
        for t, b in zip(grid.temperatures, grid.betas)
    ]
    workers = _scan_workers() if workers is None else max(1, workers)
    workers = min(workers, len(jobs))
    log.info("scanning %d temperatures with %d worker(s)", len(jobs), workers)
    if workers == 1 or warm_start:
        points: list[ScanPoint] = []
        for job in jobs:
            init = points[-1].params if warm_start and points else None
            points.append(_run_point(job, init))
            log.info("T=%.4g done after %d updates", job[3], points[-1].result.updates_used)
        return points
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_point, jobs))


# --- ranking and tabulation ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ranking:
    temperatures: np.ndarray
    order: np.ndarray  # (n_T, m): order[t, k] is the latent holding rank k + 1 at T_t

    def latent_trace(self, rank: int) -> tuple[int, ...]:
        return tuple(int(i) for i in self.order[:, rank - 1])


def _rank_order(m2: np.ndarray) -> np.ndarray:
    # lexsort keys are last-major: sort by -M^2, ties by latent index
    return np.lexsort((np.arange(m2.size), -m2))


def rank_modes(points: Sequence[ScanPoint]) -> Ranking:
    if not points:
        raise ValidationError("no scan points to rank")
    temps = np.array([p.temperature for p in points])
    m2 = np.array([[o.signal_fraction for o in p.observables] for p in points])
    order = np.array([_rank_order(row) for row in m2])
    return Ranking(temps, order)


@dataclass(frozen=True, eq=False)
class ScanTable:
    """Scan observables arranged by rank: every array is (n_T, m) or (n_T,)."""

    temperatures: np.ndarray
    betas: np.ndarray
    order: np.ndarray
    observables: dict  # field name -> (n_T, m), column k is rank k + 1
    distortion: np.ndarray  # normalized, on the evaluation split
    rate: np.ndarray
    total: np.ndarray

    @property
    def n_ranks(self) -> int:
        return self.order.shape[1]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]

    def curve(self, rank: int, name: str = "signal_fraction") -> tuple[np.ndarray, np.ndarray]:
        return self.temperatures, self.observables[name][:, rank - 1]

    def active_counts(self, min_signal: float = MIN_SIGNAL) -> np.ndarray:
        return np.sum(self.observables["signal_fraction"] > min_signal, axis=1)

    @property
    def ranking(self) -> Ranking:
        return Ranking(self.temperatures, self.order)


def scan_table(points: Sequence[ScanPoint], ranking: Ranking | None = None) -> ScanTable:
    ranking = ranking or rank_modes(points)
    raw = {
        name: np.array([[getattr(o, name) for o in p.observables] for p in points])
        for name in OBSERVABLE_FIELDS
    }
    ranked = {name: np.take_along_axis(a, ranking.order, axis=1) for name, a in raw.items()}
    return ScanTable(
        temperatures=np.array([p.temperature for p in points]),
        betas=np.array([p.beta for p in points]),
        order=ranking.order.copy(),
        observables=ranked,
        distortion=np.array([p.loss.distortion_normalized for p in points]),
        rate=np.array([p.loss.rate_nats for p in points]),
        total=np.array([p.loss.total for p in points]),
    )


def check_monotone(table: ScanTable, min_signal: float = MIN_SIGNAL, tol: float = 0.02) -> list[str]:
    """Equilibrium sanity checks; returns human-readable violations (empty when clean).

    Active counts must not grow with T, and each ranked M^2 curve must not rise
    with T by more than `tol`.
    """
    problems = []
    # temperatures are descending, so counts must be non-decreasing along the array
    counts = table.active_counts(min_signal)
    for t in np.flatnonzero(np.diff(counts) < 0):
        problems.append(
            f"active count rises from {counts[t + 1]} to {counts[t]} between "
            f"T={table.temperatures[t + 1]:.4g} and T={table.temperatures[t]:.4g}"
        )
    m2 = table["signal_fraction"]
    for k in range(table.n_ranks):
        rise = m2[:-1, k] - m2[1:, k]
        for t in np.flatnonzero(rise > tol):
            problems.append(
                f"rank {k + 1} M^2 rises by {rise[t]:.3g} from T={table.temperatures[t + 1]:.4g} "
                f"to T={table.temperatures[t]:.4g}"
            )
    return problems


SCAN_HEADER = ["T", "beta", "rank", "latent", *OBSERVABLE_FIELDS, "distortion_normalized", "rate_nats", "total_loss"]


def write_scan_csv(table: ScanTable, path: str | Path) -> None:
    rows = (
        (
            table.temperatures[t],
            table.betas[t],
            k + 1,
            table.order[t, k],
            *(table.observables[name][t, k] for name in OBSERVABLE_FIELDS),
            table.distortion[t],
            table.rate[t],
            table.total[t],
        )
        for t in range(table.temperatures.size)
        for k in range(table.n_ranks)
    )
    write_rows(path, SCAN_HEADER, rows)


def read_scan_csv(path: str | Path) -> ScanTable:
    recs = read_records(path)
    if not recs:
        raise ValidationError(f"{path} has no rows")
    temps: list[float] = []
    for r in recs:
        if not temps or r["T"] != temps[-1]:
            temps.append(r["T"])
    n_t, m = len(temps), len(recs) // len(temps)
    if n_t * m != len(recs):
        raise ValidationError(f"{path}: rows do not form a full (T, rank) table")

    def grid(name, dtype=float):
        return np.array([r[name] for r in recs], dtype=dtype).reshape(n_t, m)

    return ScanTable(
        temperatures=grid("T")[:, 0],
        betas=grid("beta")[:, 0],
        order=grid("latent", int),
        observables={name: grid(name) for name in OBSERVABLE_FIELDS},
        distortion=grid("distortion_normalized")[:, 0],
        rate=grid("rate_nats")[:, 0],
        total=grid("total_loss")[:, 0],
    )


# --- collapse spectrum ----------------------------------------------------------


@dataclass(frozen=True)
class ThresholdFit:
    threshold: float
    residual: float
    n_used: int


def fit_threshold(
    temperatures: Sequence[float],
    signal_fraction: Sequence[float],
    rank: int | None = None,
    min_signal: float = MIN_SIGNAL,
) -> ThresholdFit:
    """Least-squares T_k in M^2 = 1 - T/T_k over points with M^2 > `min_signal`.

    The model is linear in 1/T_k, which gives the closed form
    T_k = sum T^2 / sum T (1 - M^2). The residual is the RMS misfit against the
    clamped prediction [1 - T/T_k]_+ over the same points.
    """
    t = np.asarray(temperatures, dtype=float)
    m2 = np.asarray(signal_fraction, dtype=float)
    use = m2 > min_signal
    n_used = int(use.sum())
    if n_used < 2:
        raise NoActiveBranch(rank)
    t, m2 = t[use], m2[use]
    denom = float(np.sum(t * (1.0 - m2)))
    if not denom > 0:
        raise ValidationError(f"signal fractions at or above 1 cannot be fitted (rank {rank})")
    tk = float(np.sum(t * t)) / denom
    pred = np.maximum(1.0 - t / tk, 0.0)
    return ThresholdFit(tk, float(np.sqrt(np.mean((m2 - pred) ** 2))), n_used)


@dataclass(frozen=True)
class RankThreshold:
    rank: int
    fit: ThresholdFit | None  # None when the rank never has two active points
    latent_trace: tuple[int, ...]
    reliable: bool

    @property
    def threshold(self) -> float | None:
        return None if self.fit is None else self.fit.threshold


@dataclass(frozen=True)
class CollapseSpectrum:
    ranks: tuple[RankThreshold, ...]

    def thresholds(self) -> dict[int, float]:
        return {r.rank: r.threshold for r in self.ranks if r.fit is not None}

    def reliable_ranks(self) -> list[int]:
        return [r.rank for r in self.ranks if r.reliable]


def collapse_spectrum(
    table: ScanTable,
    max_rank: int | None = None,
    min_signal: float = MIN_SIGNAL,
    max_residual: float = MAX_RESIDUAL,
    min_points: int = MIN_RELIABLE_POINTS,
) -> CollapseSpectrum:
    max_rank = table.n_ranks if max_rank is None else min(max_rank, table.n_ranks)
    ranking = table.ranking
    rows = []
    for k in range(1, max_rank + 1):
        try:
            fit = fit_threshold(*table.curve(k), rank=k, min_signal=min_signal)
        except NoActiveBranch:
            fit = None
        reliable = fit is not None and fit.n_used >= min_points and fit.residual <= max_residual
        rows.append(RankThreshold(k, fit, ranking.latent_trace(k), reliable))
    return CollapseSpectrum(tuple(rows))


COLLAPSE_HEADER = ["rank", "T_k", "residual", "n_used", "reliable", "latent_trace"]


def write_collapse_csv(spec: CollapseSpectrum, path: str | Path) -> None:
    rows = (
        (
            r.rank,
            None if r.fit is None else r.fit.threshold,
            None if r.fit is None else r.fit.residual,
            0 if r.fit is None else r.fit.n_used,
            r.reliable,
            ";".join(str(i) for i in r.latent_trace),
        )
        for r in spec.ranks
    )
    write_rows(path, COLLAPSE_HEADER, rows)


def read_collapse_csv(path: str | Path) -> CollapseSpectrum:
    rows = []
    for r in read_records(path):
        fit = None if r["T_k"] is None else ThresholdFit(r["T_k"], r["residual"], r["n_used"])
        trace = str(r["latent_trace"] if r["latent_trace"] is not None else "")
        rows.append(RankThreshold(r["rank"], fit, tuple(int(i) for i in trace.split(";") if i), r["reliable"]))
    return CollapseSpectrum(tuple(rows))


# --- utility spectrum -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UtilitySpectrum:
    temperature: float
    distortions: np.ndarray  # D~_0 .. D~_K
    latent_order: tuple[int, ...]

    @property
    def deltas(self) -> np.ndarray:
        """Delta D~_k = D~_{k-1} - D~_k for k = 1..K."""
        return self.distortions[:-1] - self.distortions[1:]

    @property
    def max_rank(self) -> int:
        return self.distortions.size - 1

    def utility(self, rank: int) -> float:
        return float(self.deltas[rank - 1])


def truncated_distortions(params: VaeParams, ds: Dataset, order: Sequence[int], max_rank: int) -> np.ndarray:
    """D~_k keeping the first k latents of `order`, for k = 0..max_rank."""
    order = [int(i) for i in order]
    if not 0 <= max_rank <= len(order):
        raise ValidationError(f"max_rank must lie in [0, {len(order)}], got {max_rank}")
    return np.array([reconstruct_truncated(params, ds, order[:k]) for k in range(max_rank + 1)])


def utility_from_params(
    params: VaeParams, ds: Dataset, order: Sequence[int], max_rank: int, temperature: float
) -> UtilitySpectrum:
    d = truncated_distortions(params, ds, order, max_rank)
    return UtilitySpectrum(float(temperature), d, tuple(int(i) for i in order[:max_rank]))


def utility_spectrum(point: ScanPoint, ranking: Ranking, ds: Dataset, max_rank: int) -> UtilitySpectrum:
    """Truncation utilities of one scan point, ranked by that point's own M^2 order."""
    hits = np.flatnonzero(np.isclose(ranking.temperatures, point.temperature, rtol=1e-12, atol=0))
    if hits.size == 0:
        raise ValidationError(f"T={point.temperature} is not part of the ranking")
    return utility_from_params(point.params, ds, ranking.order[hits[0]], max_rank, point.temperature)


def truncation_curves(points: Sequence[ScanPoint], ranking: Ranking, ds: Dataset, max_rank: int) -> np.ndarray:
    """(n_T, max_rank + 1) array of D~_k(T) using the per-T rank order."""
    return np.array(
        [truncated_distortions(p.params, ds, ranking.order[t], max_rank) for t, p in enumerate(points)]
    )


def write_utility_csv(u: UtilitySpectrum, path: str | Path) -> None:
    deltas = [None, *u.deltas]
    latents = [None, *u.latent_order]
    rows = ((k, u.distortions[k], deltas[k], latents[k], u.temperature) for k in range(u.distortions.size))
    write_rows(path, ["rank", "D_tilde", "delta_D_tilde", "latent", "T_eval"], rows)


def read_utility_csv(path: str | Path) -> UtilitySpectrum:
    recs = sorted(read_records(path), key=lambda r: r["rank"])
    if not recs:
        raise ValidationError(f"{path} has no rows")
    d = np.array([r["D_tilde"] for r in recs], dtype=float)
    return UtilitySpectrum(float(recs[0]["T_eval"]), d, tuple(int(r["latent"]) for r in recs[1:]))


def write_truncation_csv(temperatures: Sequence[float], curves: np.ndarray, path: str | Path) -> None:
    rows = ((t, k, curves[i, k]) for i, t in enumerate(temperatures) for k in range(curves.shape[1]))
    write_rows(path, ["T", "k", "D_tilde_k"], rows)


def read_truncation_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    recs = read_records(path)
    temps = list(dict.fromkeys(r["T"] for r in recs))
    curves = np.array([r["D_tilde_k"] for r in recs], dtype=float).reshape(len(temps), -1)
    return np.array(temps, dtype=float), curves


# --- duality --------------------------------------------------------------------


def relative_deviation(a: float | None, b: float | None) -> float | None:
    """|a - b| / max(|a|, |b|); None when either side is missing."""
    if a is None or b is None:
        return None
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def _against(value: float | None, reference: float | None) -> float | None:
    if value is None or reference is None or reference == 0:
        return None
    return abs(value - reference) / abs(reference)


@dataclass(frozen=True)
class DualityRow:
    rank: int
    threshold: float | None
    utility: float | None
    reference: float | None
    dev_threshold_utility: float | None
    dev_threshold_reference: float | None
    dev_utility_reference: float | None
    reliable: bool


DEVIATION_FIELDS = ("dev_threshold_utility", "dev_threshold_reference", "dev_utility_reference")


@dataclass(frozen=True)
class DualityReport:
    rows: tuple[DualityRow, ...]
    temperature_eval: float

    @property
    def summary(self) -> dict:
        """Max/median of each deviation over reliable ranks."""
        out: dict = {"n_ranks": len(self.rows), "n_reliable": 0}
        reliable = [r for r in self.rows if r.reliable]
        out["n_reliable"] = len(reliable)
        overall = []
        for name in DEVIATION_FIELDS:
            vals = [getattr(r, name) for r in reliable if getattr(r, name) is not None]
            out[f"max_{name}"] = max(vals) if vals else None
            out[f"median_{name}"] = float(np.median(vals)) if vals else None
            overall += vals
        out["max_deviation"] = max(overall) if overall else None
        return out

    def to_dict(self) -> dict:
        return {
            "temperature_eval": self.temperature_eval,
            "rows": [r.__dict__ for r in self.rows],
            "summary": self.summary,
        }


def duality_report(
    collapse: CollapseSpectrum,
    utility: UtilitySpectrum,
    reference: Sequence[float] | None = None,
    max_rank: int | None = None,
) -> DualityReport:
    """Join fitted thresholds, measured utilities and (optionally) lambda_k / V by rank.

    Threshold-utility deviations are symmetric, |a - b| / max(a, b); deviations
    against the reference are relative to the reference. A rank is reliable when
    its threshold fit is reliable and a utility exists for it.
    """
    fits = {r.rank: r for r in collapse.ranks}
    ref = [] if reference is None else [float(v) for v in reference]
    overlap = set(fits) & set(range(1, utility.max_rank + 1))
    if not overlap:
        raise NothingToCompare("collapse and utility spectra share no ranks")
    top = max(max(fits), utility.max_rank)
    if max_rank is not None:
        top = min(top, max_rank)
    rows = []
    for k in range(1, top + 1):
        rt = fits.get(k)
        tk = None if rt is None else rt.threshold
        du = utility.utility(k) if k <= utility.max_rank else None
        lam = ref[k - 1] if k <= len(ref) else None
        reliable = rt is not None and rt.reliable and du is not None
        rows.append(
            DualityRow(
                k,
                tk,
                du,
                lam,
                relative_deviation(tk, du),
                _against(tk, lam),
                _against(du, lam),
                reliable,
            )
        )
    return DualityReport(tuple(rows), utility.temperature)


DUALITY_HEADER = ["rank", "T_k", "delta_D_tilde", "lambda_over_V", *DEVIATION_FIELDS, "reliable"]


def write_duality_csv(report: DualityReport, path: str | Path) -> None:
    rows = (
        (
            r.rank,
            r.threshold,
            r.utility,
            r.reference,
            r.dev_threshold_utility,
            r.dev_threshold_reference,
            r.dev_utility_reference,
            r.reliable,
        )
        for r in report.rows
    )
    write_rows(path, DUALITY_HEADER, rows)


def write_duality_json(report: DualityReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def read_duality_json(path: str | Path) -> DualityReport:
    doc = json.loads(Path(path).read_text())
    return DualityReport(tuple(DualityRow(**r) for r in doc["rows"]), doc["temperature_eval"])
