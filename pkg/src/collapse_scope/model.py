"""Linear Gaussian VAE with a closed-form expected objective.

Encoder:  mu(x) = E x + b,   log sigma^2(x) = G x + g   (affine log-variance head)
Decoder:  x_hat(z) = W z + c,  Gaussian likelihood with fixed variance sigma_dec^2
Prior:    N(0, I)

Because the decoder is linear, the posterior expectation of the squared error is
exact: ||x - W mu - c||^2 + sum_j ||W_j||^2 sigma_j^2. No sampling is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, as_samples
from .errors import NonFiniteLoss, ShapeError, ValidationError

LOGVAR_CLAMP = 30.0
ARRAY_FIELDS = ("enc_mean", "enc_mean_bias", "enc_logvar", "enc_logvar_bias", "dec", "dec_bias")


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class VaeParams:
    enc_mean: np.ndarray  # (m, d)
    enc_mean_bias: np.ndarray  # (m,)
    enc_logvar: np.ndarray  # (m, d)
    enc_logvar_bias: np.ndarray  # (m,)
    dec: np.ndarray  # (d, m)
    dec_bias: np.ndarray  # (d,)
    dec_var: float = 1.0

    def __post_init__(self):
        for name in ARRAY_FIELDS:
            object.__setattr__(self, name, _ro(getattr(self, name)))
        m, d = self.enc_mean.shape if self.enc_mean.ndim == 2 else (0, 0)
        expected = {
            "enc_mean": (m, d),
            "enc_mean_bias": (m,),
            "enc_logvar": (m, d),
            "enc_logvar_bias": (m,),
            "dec": (d, m),
            "dec_bias": (d,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if m < 1 or d < 1:
            raise ShapeError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ARRAY_FIELDS):
            raise ValidationError("parameters contain non-finite entries")
        if not (np.isfinite(self.dec_var) and self.dec_var > 0):
            raise ValidationError(f"dec_var must be positive, got {self.dec_var}")
        object.__setattr__(self, "dec_var", float(self.dec_var))

    @property
    def latent_dim(self) -> int:
        return self.enc_mean.shape[0]

    @property
    def data_dim(self) -> int:
        return self.enc_mean.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ARRAY_FIELDS}

    def replace(self, **updates) -> "VaeParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(updates)
        return VaeParams(**kw)

    @classmethod
    def collapsed(cls, d: int, m: int, data_mean=None, dec_var: float = 1.0) -> "VaeParams":
        """Posterior equal to the prior everywhere; decoder outputs `data_mean`."""
        bias = np.zeros(d) if data_mean is None else np.asarray(data_mean, dtype=float)
        return cls(
            np.zeros((m, d)), np.zeros(m), np.zeros((m, d)), np.zeros(m), np.zeros((d, m)), bias, dec_var
        )

    def to_dict(self) -> dict:
        out = {"dec_var": self.dec_var}
        for name in ARRAY_FIELDS:
            a = getattr(self, name)
            out[name] = {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "VaeParams":
        try:
            kw = {
                name: np.array(doc[name]["data"], dtype=float).reshape(doc[name]["shape"])
                for name in ARRAY_FIELDS
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad parameter document: {exc}") from exc
        return cls(**kw, dec_var=float(doc.get("dec_var", 1.0)))

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> "VaeParams":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "VaeParams":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class LossBreakdown:
    distortion_nats: float
    rate_nats: float
    total: float
    distortion_normalized: float
    beta: float
    temperature: float


@dataclass(frozen=True)
class ModeObservables:
    mu_sq: float
    var_mean: float
    logvar_mean: float
    rate_k: float
    signal_fraction: float
    scale: float
    jensen_gap: float


OBSERVABLE_FIELDS = tuple(f.name for f in fields(ModeObservables))


def _check(p: VaeParams, x: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != p.data_dim:
        raise ShapeError(f"data has shape {x.shape}, model expects {p.data_dim} features")


def _encode(p: VaeParams, x: np.ndarray):
    mu = x @ p.enc_mean.T + p.enc_mean_bias
    raw = x @ p.enc_logvar.T + p.enc_logvar_bias
    logvar = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mu, logvar, np.exp(logvar), raw


def _total_variance(x: np.ndarray) -> float:
    xc = x - x.mean(axis=0)
    return float(np.mean(np.sum(xc * xc, axis=1)))


class DataMoments:
    """Samples plus their mean, centered covariance and total variance.

    Everything in the objective except the posterior variances is a quadratic
    form in x, so it can be evaluated from these moments in O(d^2 m) instead
    of per sample. Build once and reuse across many evaluations.
    """

    __slots__ = ("x", "n", "mean", "cov", "total_variance")

    def __init__(self, x: np.ndarray):
        self.x = x
        self.n = x.shape[0]
        self.mean = x.mean(axis=0)
        xc = x - self.mean
        self.cov = xc.T @ xc / self.n
        self.total_variance = float(np.trace(self.cov))

    @classmethod
    def of(cls, ds: "Dataset | np.ndarray | DataMoments") -> "DataMoments":
        return ds if isinstance(ds, DataMoments) else cls(as_samples(ds))


def evaluate(
    p: VaeParams,
    ds: Dataset | np.ndarray | DataMoments,
    beta: float,
    reference_variance: float | None = None,
    with_grad: bool = True,
) -> tuple[LossBreakdown, dict[str, np.ndarray] | None]:
    """Expected loss and (optionally) its exact gradient in one pass.

    With residual e = (I - W E) xbar - (W b + c), the mean squared error is
    tr(P C P^T) + ||e||^2 with P = I - W E; the posterior-noise term adds
    sum_j ||W_j||^2 mean(sigma_j^2).
    """
    mo = DataMoments.of(ds)
    _check(p, mo.x)
    if beta < 0:
        raise ValidationError(f"beta must be non-negative, got {beta}")
    return evaluate_arrays(p.arrays(), p.dec_var, mo, beta, reference_variance, with_grad)


def evaluate_arrays(
    arrs: dict[str, np.ndarray],
    s2: float,
    mo: DataMoments,
    beta: float,
    reference_variance: float | None = None,
    with_grad: bool = True,
) -> tuple[LossBreakdown, dict[str, np.ndarray] | None]:
    """Unchecked core of `evaluate` on raw parameter arrays (used by the training loop)."""
    x, n = mo.x, mo.n
    E, b, G, g = arrs["enc_mean"], arrs["enc_mean_bias"], arrs["enc_logvar"], arrs["enc_logvar_bias"]
    W, c = arrs["dec"], arrs["dec_bias"]

    # overflow surfaces as NonFiniteLoss below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        raw = x @ G.T + g
        clipped = np.abs(raw) > LOGVAR_CLAMP
        any_clipped = bool(clipped.any())
        logvar = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP) if any_clipped else raw
        var = np.exp(logvar)
        var_mean = var.mean(axis=0)
        logvar_mean = logvar.mean(axis=0)

        P = np.eye(W.shape[0]) - W @ E
        PC = P @ mo.cov
        mu_bar = E @ mo.mean + b
        e = mo.mean - W @ mu_bar - c
        col_sq = np.sum(W * W, axis=0)
        EC = E @ mo.cov
        mu_sq = np.einsum("kd,kd->k", EC, E) + mu_bar * mu_bar

        sq_err = float(np.sum(PC * P) + e @ e + col_sq @ var_mean)
        distortion = sq_err / (2.0 * s2)
        rate = 0.5 * float(np.sum(mu_sq + var_mean - logvar_mean - 1.0))
        if not np.isfinite(distortion):
            raise NonFiniteLoss("distortion")
        if not np.isfinite(rate):
            raise NonFiniteLoss("rate")

    v_ref = mo.total_variance if reference_variance is None else float(reference_variance)
    loss = LossBreakdown(
        distortion_nats=distortion,
        rate_nats=rate,
        total=distortion + beta * rate,
        distortion_normalized=sq_err / mo.total_variance if mo.total_variance > 0 else float("nan"),
        beta=float(beta),
        temperature=float(beta * s2 / v_ref) if v_ref > 0 else float("inf"),
    )
    if not with_grad:
        return loss, None

    inv = 1.0 / s2
    wte = W.T @ e
    g_enc = -inv * (W.T @ PC + np.outer(wte, mo.mean)) + beta * (EC + np.outer(mu_bar, mo.mean))
    g_enc_bias = -inv * wte + beta * mu_bar
    g_dec = inv * (-(PC @ E.T) - np.outer(e, mu_bar) + W * var_mean)

    kappa = 0.5 * inv * col_sq + 0.5 * beta  # dL / d mean(sigma_j^2)
    if any_clipped:
        live = ~clipped
        d_var_dG = ((var * live).T @ x) / n
        d_var_dg = (var * live).mean(axis=0)
        d_lv_dG = (live.T @ x) / n
        d_lv_dg = live.mean(axis=0)
    else:
        d_var_dG = (var.T @ x) / n
        d_var_dg = var_mean
        d_lv_dG = np.broadcast_to(mo.mean, G.shape)
        d_lv_dg = 1.0
    grads = {
        "enc_mean": g_enc,
        "enc_mean_bias": g_enc_bias,
        "enc_logvar": kappa[:, None] * d_var_dG - 0.5 * beta * d_lv_dG,
        "enc_logvar_bias": kappa * d_var_dg - 0.5 * beta * d_lv_dg,
        "dec": g_dec,
        "dec_bias": -inv * e,
    }
    return loss, grads


def expected_loss(
    p: VaeParams, ds: Dataset | np.ndarray | DataMoments, beta: float, reference_variance: float | None = None
) -> LossBreakdown:
    """Exact posterior-expected loss L = D + beta R.

    The normalized distortion is divided by the evaluated data's own total
    variance. The temperature beta * sigma_dec^2 / V uses `reference_variance`
    when given (the training variance that fixed beta), else the same V.
    """
    return evaluate(p, ds, beta, reference_variance, with_grad=False)[0]


def loss_gradients(p: VaeParams, ds: Dataset | np.ndarray | DataMoments, beta: float) -> dict[str, np.ndarray]:
    return evaluate(p, ds, beta)[1]


def observable_arrays(p: VaeParams, ds: Dataset | np.ndarray) -> dict[str, np.ndarray]:
    """Per-latent observables as arrays of length m, keyed like ModeObservables."""
    x = as_samples(ds)
    _check(p, x)
    mu, logvar, var, _ = _encode(p, x)
    mu_sq = np.mean(mu * mu, axis=0)
    var_mean = np.mean(var, axis=0)
    logvar_mean = np.mean(logvar, axis=0)
    scale = mu_sq + var_mean
    return {
        "mu_sq": mu_sq,
        "var_mean": var_mean,
        "logvar_mean": logvar_mean,
        "rate_k": 0.5 * np.mean(mu * mu + var - logvar - 1.0, axis=0),
        "signal_fraction": mu_sq / scale,
        "scale": scale,
        "jensen_gap": np.log(var_mean) - logvar_mean,
    }


def posterior_observables(
    p: VaeParams, ds: Dataset | np.ndarray, beta: float | None = None
) -> list[ModeObservables]:
    # beta does not enter any observable; accepted for call-site symmetry with expected_loss
    arrs = observable_arrays(p, ds)
    return [
        ModeObservables(**{k: float(arrs[k][j]) for k in OBSERVABLE_FIELDS})
        for j in range(p.latent_dim)
    ]


def reconstruct_truncated(p: VaeParams, ds: Dataset | np.ndarray, keep: Sequence[int]) -> float:
    """Normalized squared error decoding from posterior means of `keep` only (others at 0)."""
    x = as_samples(ds)
    _check(p, x)
    keep = np.asarray(list(keep), dtype=int)
    if keep.size and (keep.min() < 0 or keep.max() >= p.latent_dim):
        raise IndexError(f"keep indices must lie in [0, {p.latent_dim}), got {keep.tolist()}")
    recon = np.broadcast_to(p.dec_bias, x.shape)
    if keep.size:
        mu = x @ p.enc_mean[keep].T + p.enc_mean_bias[keep]
        recon = recon + mu @ p.dec[:, keep].T
    err = x - recon
    return float(np.mean(np.sum(err * err, axis=1)) / _total_variance(x))


def rescale_latents(p: VaeParams, s: Sequence[float]) -> VaeParams:
    """mu -> s mu, sigma^2 -> s^2 sigma^2, W -> W / s, per latent."""
    s = np.asarray(s, dtype=float)
    return p.replace(
        enc_mean=p.enc_mean * s[:, None],
        enc_mean_bias=p.enc_mean_bias * s,
        enc_logvar_bias=p.enc_logvar_bias + 2.0 * np.log(s),
        dec=p.dec / s,
    )
