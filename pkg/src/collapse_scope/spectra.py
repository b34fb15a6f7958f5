"""Covariance, symmetric eigendecomposition and the normalized PCA spectrum."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, as_samples
from .errors import NotSymmetric, TooFewSamples, ValidationError
from .tables import read_records, write_rows

log = logging.getLogger(__name__)

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100


def covariance(ds: Dataset | np.ndarray) -> np.ndarray:
    """Population covariance (1/N) of the samples about their mean."""
    x = as_samples(ds)
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples(f"covariance needs at least 2 samples, got {n}")
    xc = x - x.mean(axis=0)
    c = xc.T @ xc / n
    return 0.5 * (c + c.T)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint (p, q) pairs covering every pair once."""
    size = n + (n % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = map(np.array, zip(*pairs))
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def eigh_symmetric(m: np.ndarray, symmetry_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in tournament order so that
    the rotations within a round touch disjoint rows/columns and can be applied
    together. Iterates until the off-diagonal Frobenius norm drops below
    ``1e-13 * ||A||_F``.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns; each column's largest-magnitude entry is positive.
    """
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    n = a.shape[0]
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny) if n else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > symmetry_tol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    v = np.eye(n)

    norm = np.linalg.norm(a)
    rounds = _round_robin(n)
    off_mask = ~np.eye(n, dtype=bool)
    for sweep in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(np.sum(a[off_mask] ** 2))
        if off <= JACOBI_TOL * norm:
            break
        for p, q in rounds:
            apq = a[p, q]
            live = np.abs(apq) > np.finfo(float).tiny
            if not np.any(live):
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        log.warning("Jacobi did not reach tolerance after %d sweeps", JACOBI_MAX_SWEEPS)

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    if n:
        pivot = np.argmax(np.abs(v), axis=0)
        v = v * np.where(v[pivot, np.arange(n)] < 0, -1.0, 1.0)
    return w, v


@dataclass(frozen=True, eq=False)
class DataSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    total_variance: float

    @property
    def normalized_weights(self) -> np.ndarray:
        """lambda_k / V: predicted collapse thresholds and utilities per rank."""
        return self.eigenvalues / self.total_variance

    @property
    def beta_thresholds(self) -> np.ndarray:
        """Raw-beta collapse points lambda_k / sigma_dec^2 at sigma_dec^2 = 1."""
        return self.eigenvalues.copy()

    def __len__(self) -> int:
        return self.eigenvalues.size


def spectrum_from_covariance(c: np.ndarray) -> DataSpectrum:
    w, u = eigh_symmetric(c)
    total = float(np.sum(w))
    if not total > 0:
        raise ValidationError("data has zero total variance")
    # tiny negatives are round-off
    w = np.where((w < 0) & (w >= -1e-10 * total), 0.0, w)
    total = float(np.sum(w))
    w.flags.writeable = False
    u.flags.writeable = False
    return DataSpectrum(w, u, total)


def pca_spectrum(ds: Dataset | np.ndarray) -> DataSpectrum:
    return spectrum_from_covariance(covariance(ds))


def write_spectrum_csv(spec: DataSpectrum, path: str | Path) -> None:
    rows = zip(range(1, len(spec) + 1), spec.eigenvalues, spec.normalized_weights)
    write_rows(path, ["rank", "lambda", "lambda_over_V"], rows)


def read_spectrum_csv(path: str | Path) -> np.ndarray:
    """Eigenvalue column (lambda_k) in rank order."""
    recs = sorted(read_records(path), key=lambda r: r["rank"])
    return np.array([float(r["lambda"]) for r in recs])
