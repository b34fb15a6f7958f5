"""Adam minimization of the exact expected loss with validation early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import NonFiniteGradient, NonFiniteLoss, ShapeError, ValidationError
from .tables import write_rows
from .model import ARRAY_FIELDS, DataMoments, VaeParams, evaluate_arrays, expected_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    max_updates: int = 20_000
    patience_fraction: float = 0.1
    batch_size: int | None = None  # None means full batch
    seed: int = 0
    init_scale: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.patience_fraction <= 1:
            raise ValidationError(f"patience_fraction must be in (0, 1], got {self.patience_fraction}")
        if self.max_updates < 1:
            raise ValidationError(f"max_updates must be >= 1, got {self.max_updates}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValidationError(f"eval_every must be >= 1, got {self.eval_every}")

    @property
    def patience_updates(self) -> int:
        return max(1, int(round(self.patience_fraction * self.max_updates)))


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: VaeParams
    history: list[tuple[int, float, float]]  # (update, train loss, val loss)
    stopped_early: bool
    updates_used: int
    best_val_loss: float = field(default=float("nan"))


def init_params(d: int, m: int, seed: int, init_scale: float = 1e-2, dec_var: float = 1.0) -> VaeParams:
    """Small Gaussian encoder-mean/decoder weights; unit posterior variance; zero biases."""
    if d < 1 or m < 1:
        raise ShapeError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    rng = np.random.default_rng(seed)
    enc = init_scale * rng.standard_normal((m, d))
    dec = init_scale * rng.standard_normal((d, m))
    return VaeParams(enc, np.zeros(m), np.zeros((m, d)), np.zeros(m), dec, np.zeros(d), dec_var)


@dataclass(frozen=True, eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: VaeParams) -> "AdamState":
        arrs = params.arrays()
        return cls({k: np.zeros_like(a) for k, a in arrs.items()}, {k: np.zeros_like(a) for k, a in arrs.items()})


def _adam_moments(g, m, v, t: int, config: TrainConfig):
    """New first/second moments and the bias-corrected step for one array."""
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * (g * g)
    step = (config.learning_rate / (1.0 - b1**t)) * m / (np.sqrt(v / (1.0 - b2**t)) + config.adam_eps)
    return m, v, step


def adam_step(
    params: VaeParams, grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig
) -> tuple[VaeParams, AdamState]:
    t = state.t + 1
    new_m, new_v, updates = {}, {}, {}
    for name in ARRAY_FIELDS:
        g = grads[name]
        if g.shape != state.m[name].shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, state has {state.m[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        new_m[name], new_v[name], step = _adam_moments(g, state.m[name], state.v[name], t, config)
        updates[name] = getattr(params, name) - step
    return params.replace(**updates), AdamState(new_m, new_v, t)


def _batches(n: int, batch_size: int | None, rng: np.random.Generator):
    while True:
        if batch_size is None or batch_size >= n:
            yield None
            continue
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start : start + batch_size]


def train_to_equilibrium(
    train: Dataset,
    val: Dataset,
    beta: float,
    cfg: TrainConfig,
    m: int | None = None,
    init: VaeParams | None = None,
    history_path: str | Path | None = None,
) -> TrainResult:
    """Run Adam until the update budget or until validation loss stalls.

    Validation is checked every `cfg.eval_every` updates; training stops once
    `patience_fraction * max_updates` updates pass without improvement. The
    best-validation checkpoint is returned.
    """
    if train.n_features != val.n_features:
        raise ShapeError(f"train has {train.n_features} features, val has {val.n_features}")
    if init is None:
        if m is None:
            raise ValidationError("give either m or init")
        init = init_params(train.n_features, m, cfg.seed, cfg.init_scale)
    x_train = train.samples
    full_train, full_val = DataMoments(x_train), DataMoments(val.samples)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))
    batches = _batches(x_train.shape[0], cfg.batch_size, rng)
    dec_var = init.dec_var

    def val_loss(p: VaeParams) -> float:
        return expected_loss(p, full_val, beta).total

    # hot loop works on plain mutable arrays; VaeParams is built at checkpoints only
    arrs = {k: a.copy() for k, a in init.arrays().items()}
    adam_m = {k: np.zeros_like(a) for k, a in arrs.items()}
    adam_v = {k: np.zeros_like(a) for k, a in arrs.items()}

    try:
        best_params, best_val = init, val_loss(init)
        history = [(0, expected_loss(init, full_train, beta).total, best_val)]
    except NonFiniteLoss as exc:
        raise NonFiniteLoss(exc.term, 0) from exc
    last_improvement, stopped_early, update = 0, False, 0
    for update in range(1, cfg.max_updates + 1):
        idx = next(batches)
        xb = full_train if idx is None else DataMoments(x_train[idx])
        try:
            _, grads = evaluate_arrays(arrs, dec_var, xb, beta)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(exc.term, update) from exc
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteLoss(f"gradient of {name}", update)
            adam_m[name], adam_v[name], step = _adam_moments(g, adam_m[name], adam_v[name], update, cfg)
            arrs[name] -= step

        if update % cfg.eval_every == 0 or update == cfg.max_updates:
            params = VaeParams(**arrs, dec_var=dec_var)
            v = val_loss(params)
            if not np.isfinite(v):
                raise NonFiniteLoss("validation loss", update)
            history.append((update, expected_loss(params, full_train, beta).total, v))
            if v < best_val:
                best_val, best_params, last_improvement = v, params, update
            elif update - last_improvement >= cfg.patience_updates:
                stopped_early = True
                break

    if history_path is not None:
        write_history(history, history_path)
    return TrainResult(best_params, history, stopped_early, update, best_val)


def write_history(history, path: str | Path) -> None:
    write_rows(path, ["update", "train_loss", "val_loss"], history)
