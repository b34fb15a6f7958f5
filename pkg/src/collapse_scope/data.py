"""Datasets: synthetic Gaussian generation, CSV ingestion, standardization and splits.

Spatial splits tile the sphere into latitude bands of fixed height, each cut into
longitude cells whose ground width matches the band height, so blocks have
roughly equal area. Whole blocks are assigned to a split.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateFeature,
    EmptyDataset,
    InvalidBlockSize,
    InvalidSpectrum,
    NoCoordinates,
    ParseError,
    TooFewSamples,
    ValidationError,
)
from .tables import write_rows

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
SPLIT_LABELS = ("train", "val", "test")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    feature_names: tuple[str, ...] = ()
    coords: np.ndarray | None = None  # (N, 2) as (lon, lat) in degrees

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValidationError(f"samples must be 2-D, got shape {x.shape}")
        n, d = x.shape
        if n < 2:
            raise TooFewSamples(f"need at least 2 samples, got {n}")
        if d < 1:
            raise ValidationError("need at least one feature")
        if not np.all(np.isfinite(x)):
            raise ValidationError("samples contain non-finite entries")
        object.__setattr__(self, "samples", _frozen(x))

        names = tuple(self.feature_names) or tuple(f"f{j + 1}" for j in range(d))
        if len(names) != d:
            raise ValidationError(f"{len(names)} feature names for {d} features")
        object.__setattr__(self, "feature_names", names)

        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            if c.shape != (n, 2):
                raise ValidationError(f"coords must have shape ({n}, 2), got {c.shape}")
            lon, lat = c[:, 0], c[:, 1]
            if np.any(np.abs(lat) > 90) or np.any(lon < -180) or np.any(lon >= 180):
                raise ValidationError("coords out of range (lon in [-180, 180), lat in [-90, 90])")
            object.__setattr__(self, "coords", _frozen(c))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_features(self) -> int:
        return self.samples.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def total_variance(self) -> float:
        """Mean squared distance to the data mean (trace of the population covariance)."""
        xc = self.samples - self.mean
        return float(np.mean(np.sum(xc * xc, axis=1)))

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        coords = None if self.coords is None else self.coords[idx]
        return Dataset(self.samples[idx], self.feature_names, coords)

    def with_samples(self, samples: np.ndarray) -> "Dataset":
        return Dataset(samples, self.feature_names, self.coords)


def as_samples(ds: Dataset | np.ndarray) -> np.ndarray:
    if isinstance(ds, Dataset):
        return ds.samples
    x = np.asarray(ds, dtype=float)
    return x[:, None] if x.ndim == 1 else x


# --- synthetic data -------------------------------------------------------------


def random_rotation(d: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign-fixed R diagonal."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def generate_gaussian(
    spectrum: Sequence[float],
    n_samples: int,
    seed: int,
    rotation_seed: int | None = None,
) -> Dataset:
    """Zero-mean Gaussian samples whose population covariance has eigenvalues `spectrum`.

    The eigenbasis is a random rotation drawn from `rotation_seed` (defaults to
    `seed`); pass the same rotation seed with different sample seeds to draw
    independent splits from one distribution.
    """
    lam = np.asarray(spectrum, dtype=float).ravel()
    if lam.size == 0 or not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise InvalidSpectrum(f"all eigenvalues must be positive and finite, got {lam.tolist()}")
    if n_samples < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n_samples}")
    d = lam.size
    rot = random_rotation(d, seed if rotation_seed is None else rotation_seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    z = rng.standard_normal((n_samples, d)) * np.sqrt(lam)
    return Dataset(z @ rot.T)


def synthetic_splits(
    spectrum: Sequence[float],
    n_samples: int,
    seed: int,
    n_val: int | None = None,
    n_test: int | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Independent train/val/test draws sharing one rotated eigenbasis."""
    s_train, s_val, s_test = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
    return (
        generate_gaussian(spectrum, n_samples, s_train, rotation_seed=seed),
        generate_gaussian(spectrum, n_val or n_samples, s_val, rotation_seed=seed),
        generate_gaussian(spectrum, n_test or n_samples, s_test, rotation_seed=seed),
    )


# --- standardization ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, ds: Dataset) -> Dataset:
        return ds.with_samples((ds.samples - self.mean) / self.std)

    def invert(self, ds: Dataset) -> Dataset:
        return ds.with_samples(ds.samples * self.std + self.mean)


def standardize(ds: Dataset, stats_source_idx: Sequence[int]) -> tuple[Dataset, FeatureStats]:
    """Z-score every feature using mean/std computed over `stats_source_idx` rows only."""
    idx = np.asarray(stats_source_idx, dtype=int)
    if idx.size == 0:
        raise ValidationError("stats_source_idx is empty")
    src = ds.samples[idx]
    mean = src.mean(axis=0)
    std = src.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise DegenerateFeature(j, ds.feature_names[j])
    stats = FeatureStats(_frozen(mean), _frozen(std))
    return stats.apply(ds), stats


# --- splits ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    block_side_km: float | None
    seed: int
    block_ids: np.ndarray = field(default=None)  # per row; -1 when not block-based

    def labels(self, n: int) -> list[str]:
        out = [""] * n
        for name, idx in zip(SPLIT_LABELS, (self.train_idx, self.val_idx, self.test_idx)):
            for i in idx:
                out[i] = name
        return out

    def apply(self, ds: Dataset) -> tuple[Dataset, Dataset, Dataset]:
        return ds.subset(self.train_idx), ds.subset(self.val_idx), ds.subset(self.test_idx)


@dataclass(frozen=True)
class BlockGrid:
    """Latitude bands of height `side_km`, each cut into equal longitude cells."""

    side_km: float
    radius_km: float = EARTH_RADIUS_KM

    @property
    def band_height_deg(self) -> float:
        return math.degrees(self.side_km / self.radius_km)

    @property
    def n_bands(self) -> int:
        return max(1, math.ceil(180.0 / self.band_height_deg))

    def _band_edges(self, band: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.band_height_deg
        lo = -90.0 + band * h
        hi = np.minimum(lo + h, 90.0)
        return lo, hi

    def cells_per_band(self) -> np.ndarray:
        lo, hi = self._band_edges(np.arange(self.n_bands))
        centre = np.radians(0.5 * (lo + hi))
        circumference = 2 * math.pi * self.radius_km * np.cos(centre)
        return np.maximum(1, np.round(circumference / self.side_km)).astype(int)

    def block_index(self, coords: np.ndarray) -> np.ndarray:
        lon, lat = coords[:, 0], coords[:, 1]
        nb = self.n_bands
        band = np.clip(np.floor((lat + 90.0) / self.band_height_deg).astype(int), 0, nb - 1)
        cells = self.cells_per_band()
        offsets = np.concatenate([[0], np.cumsum(cells)[:-1]])
        ncell = cells[band]
        col = np.clip(np.floor((lon + 180.0) / 360.0 * ncell).astype(int), 0, ncell - 1)
        return offsets[band] + col

    def block_area(self, block_ids: np.ndarray) -> np.ndarray:
        """Exact spherical area (km^2) of each block."""
        cells = self.cells_per_band()
        offsets = np.concatenate([[0], np.cumsum(cells)])
        band = np.searchsorted(offsets, block_ids, side="right") - 1
        lo, hi = self._band_edges(band)
        dlon = 2 * math.pi / cells[band]
        return self.radius_km**2 * dlon * (np.sin(np.radians(hi)) - np.sin(np.radians(lo)))


def _validate_fractions(train_fraction: float, val_fraction: float) -> None:
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if not 0 < val_fraction < 1 - train_fraction:
        raise ValidationError(
            f"val_fraction must be in (0, {1 - train_fraction:g}), got {val_fraction}"
        )


def spatial_block_split(
    ds: Dataset,
    block_side_km: float = 500.0,
    seed: int = 0,
    train_fraction: float = 0.62,
    val_fraction: float = 0.19,
) -> SplitAssignment:
    """Assign whole spatial blocks to train/val/test by area-weighted sampling.

    Occupied blocks are visited in a seeded random order and added to the
    training set until its area reaches `train_fraction` of the occupied area;
    the remaining blocks fill validation up to `val_fraction`, the rest is test.
    """
    if ds.coords is None:
        raise NoCoordinates("spatial_block_split needs per-sample coordinates")
    if not block_side_km > 0:
        raise InvalidBlockSize(f"block side must be positive, got {block_side_km}")
    _validate_fractions(train_fraction, val_fraction)

    grid = BlockGrid(block_side_km)
    block_ids = grid.block_index(ds.coords)
    occupied = np.unique(block_ids)  # sorted, so order is independent of row order
    area = grid.block_area(occupied)
    total = area.sum()

    rng = np.random.default_rng(seed)
    order = rng.permutation(occupied.size)
    label = np.empty(occupied.size, dtype=int)
    cum = 0.0
    stage, targets = 0, (train_fraction * total, (train_fraction + val_fraction) * total)
    for pos in order:
        while stage < 2 and cum >= targets[stage]:
            stage += 1
        label[pos] = stage
        cum += area[pos]

    row_label = label[np.searchsorted(occupied, block_ids)]
    idx = [np.flatnonzero(row_label == s) for s in range(3)]
    return SplitAssignment(*idx, block_side_km=float(block_side_km), seed=seed, block_ids=block_ids)


def random_split(
    n_samples: int, seed: int = 0, train_fraction: float = 0.62, val_fraction: float = 0.19
) -> SplitAssignment:
    """Row-level random split for data without coordinates."""
    _validate_fractions(train_fraction, val_fraction)
    perm = np.random.default_rng(seed).permutation(n_samples)
    n_train = int(round(train_fraction * n_samples))
    n_val = int(round(val_fraction * n_samples))
    parts = np.split(perm, [n_train, n_train + n_val])
    return SplitAssignment(
        *(np.sort(p) for p in parts),
        block_side_km=None,
        seed=seed,
        block_ids=np.full(n_samples, -1, dtype=int),
    )


def write_split_csv(split: SplitAssignment, n_samples: int, path: str | Path) -> None:
    labels = split.labels(n_samples)
    block_ids = split.block_ids if split.block_ids is not None else np.full(n_samples, -1)
    write_rows(path, ["row_index", "split", "block_id"], ((i, labels[i], block_ids[i]) for i in range(n_samples)))


# --- CSV ingestion --------------------------------------------------------------


def load_csv_with_report(path: str | Path) -> tuple[Dataset, int]:
    """Parse a header+numeric CSV; returns the dataset and the number of dropped rows.

    Rows with a missing or non-finite value (or out-of-range coordinates) are
    dropped. A token that is not a number at all is a parse error.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        except csv.Error as exc:
            raise ParseError(1, str(exc)) from exc
        header = [h.strip() for h in header]
        has_coords = len(header) >= 2 and [h.lower() for h in header[:2]] == ["lon", "lat"]
        n_lead = 2 if has_coords else 0
        names = header[n_lead:]
        if not names:
            raise ParseError(1, "no feature columns in header")

        rows, dropped = [], 0
        try:
            for lineno, raw in enumerate(reader, start=2):
                if not raw or all(not tok.strip() for tok in raw):
                    continue
                if len(raw) != len(header):
                    raise ParseError(lineno, f"expected {len(header)} fields, got {len(raw)}")
                values = []
                for tok in raw:
                    tok = tok.strip()
                    if tok == "":
                        values.append(math.nan)
                        continue
                    try:
                        values.append(float(tok))
                    except ValueError:
                        raise ParseError(lineno, f"not a number: {tok!r}") from None
                if not all(math.isfinite(v) for v in values):
                    dropped += 1
                    continue
                if has_coords:
                    lon, lat = values[0], values[1]
                    if lon == 180.0:
                        values[0] = lon = -180.0
                    if not (-180 <= lon < 180 and -90 <= lat <= 90):
                        dropped += 1
                        continue
                rows.append(values)
        except csv.Error as exc:
            raise ParseError(reader.line_num, str(exc)) from exc

    if not rows:
        raise EmptyDataset(f"{path} has no valid rows ({dropped} dropped)")
    arr = np.array(rows, dtype=float)
    if arr.shape[0] < 2:
        raise TooFewSamples(f"{path} has a single valid row")
    coords = arr[:, :2] if has_coords else None
    return Dataset(arr[:, n_lead:], tuple(names), coords), dropped


def load_csv(path: str | Path) -> Dataset:
    ds, dropped = load_csv_with_report(path)
    if dropped:
        log.warning("%s: dropped %d row(s) with missing or non-finite values", path, dropped)
    return ds


def write_csv(ds: Dataset, path: str | Path) -> None:
    lead = ["lon", "lat"] if ds.coords is not None else []
    rows = (
        ([] if ds.coords is None else list(ds.coords[i])) + list(ds.samples[i]) for i in range(ds.n_samples)
    )
    write_rows(path, lead + list(ds.feature_names), rows)
