"""Command-line driver: each subcommand is one pipeline stage reading and writing
files in the output directory; `all` chains them.

Settings come from built-in defaults, then an optional INI file (keys in a
[run] section, named like the long flags), then command-line flags.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import scan as sc
from .data import (
    load_csv,
    random_split,
    spatial_block_split,
    standardize,
    synthetic_splits,
    write_csv,
    write_split_csv,
)
from .errors import CollapseScopeError, MissingInput, ValidationError
from .model import VaeParams
from .report import render_figures
from .spectra import DataSpectrum, pca_spectrum, write_spectrum_csv
from .tables import read_records
from .theory import predict_scan, write_prediction_csv
from .trainer import TrainConfig

log = logging.getLogger("collapse_scope")

STAGES = ("gen-data", "split", "pca", "scan", "fit", "utility", "duality", "predict", "figures", "all")

# desk-scale training preset; 3e-3 with 30k updates is ~1.7x tighter at ~3x the runtime
DEFAULT_LR = 1e-2
DEFAULT_MAX_UPDATES = 20000

SPLIT_FILES = {"train": "train.csv", "val": "val.csv", "test": "test.csv"}


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    spectrum: tuple[float, ...] | None = None
    csv: Path | None = None
    n: int = 4096
    seed: int = 0
    m: int = 16
    t_max: float | None = None
    t_min: float | None = None
    points_per_decade: int = 8
    lr: float = DEFAULT_LR
    max_updates: int = DEFAULT_MAX_UPDATES
    patience: float = 0.1
    block_km: float = 500.0
    train_frac: float = 0.62
    val_frac: float = 0.19
    out: Path = Path(".")
    grid_default: bool = False
    figures: bool = True

    def __post_init__(self):
        if self.spectrum is not None and self.csv is not None:
            raise ValidationError("give either --spectrum or --csv, not both")
        if self.n < 2:
            raise ValidationError(f"--n must be >= 2, got {self.n}")
        if self.m < 1:
            raise ValidationError(f"--m must be >= 1, got {self.m}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr, max_updates=self.max_updates, patience_fraction=self.patience, seed=self.seed
        )

    def grid_bounds(self) -> tuple[float | None, float | None]:
        return (None, None) if self.grid_default else (self.t_max, self.t_min)


CONVERTERS = {
    "spectrum": _floats,
    "csv": Path,
    "n": int,
    "seed": int,
    "m": int,
    "t_max": float,
    "t_min": float,
    "points_per_decade": int,
    "lr": float,
    "max_updates": int,
    "patience": float,
    "block_km": float,
    "train_frac": float,
    "val_frac": float,
    "out": Path,
    "grid_default": _bool,
    "figures": _bool,
}


def _convert(key: str, raw) -> object:
    try:
        return CONVERTERS[key](raw)
    except ValidationError:
        raise
    except (TypeError, ValueError):
        raise ValidationError(f"bad value for {key}: {raw!r}") from None


def load_config(path: str | Path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise MissingInput(f"config file not found: {path}")
    section = parser["run"] if parser.has_section("run") else parser.defaults()
    out = {}
    for key, raw in section.items():
        key = key.replace("-", "_")
        if key not in CONVERTERS:
            raise ValidationError(f"unknown config key {key!r} in {path}")
        out[key] = _convert(key, raw)
    return out


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path)
    common.add_argument("--spectrum", help="comma-separated eigenvalues of a synthetic Gaussian")
    common.add_argument("--csv", help="input table; optional leading lon,lat columns")
    common.add_argument("--n", type=int, help="samples per synthetic split")
    common.add_argument("--seed", type=int)
    common.add_argument("--m", type=int, help="latent dimension")
    common.add_argument("--t-max", type=float)
    common.add_argument("--t-min", type=float)
    common.add_argument("--points-per-decade", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--max-updates", type=int)
    common.add_argument("--patience", type=float, help="patience as a fraction of --max-updates")
    common.add_argument("--block-km", type=float)
    common.add_argument("--train-frac", type=float)
    common.add_argument("--val-frac", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--grid-default", action="store_true", default=None, help="ignore t-max/t-min overrides")
    common.add_argument("--no-figures", dest="figures", action="store_false", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="collapse-scope", description="Posterior-collapse temperature scans.")
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common])
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    values = load_config(ns.config) if ns.config else {}
    for f in fields(RunConfig):
        raw = getattr(ns, f.name, None)
        if raw is not None:
            values[f.name] = _convert(f.name, raw)
    return RunConfig(**values)


# --- stages ---------------------------------------------------------------------


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingInput(f"missing input {path}: {hint}")
    return path


def stage_gen_data(cfg: RunConfig) -> None:
    if cfg.spectrum is None:
        raise MissingInput("gen-data needs --spectrum")
    for name, ds in zip(SPLIT_FILES, synthetic_splits(cfg.spectrum, cfg.n, cfg.seed)):
        write_csv(ds, cfg.out / SPLIT_FILES[name])


def stage_split(cfg: RunConfig) -> None:
    if cfg.csv is None:
        raise MissingInput("split needs --csv")
    ds = load_csv(cfg.csv)
    if ds.coords is not None:
        split = spatial_block_split(ds, cfg.block_km, cfg.seed, cfg.train_frac, cfg.val_frac)
    else:
        log.warning("%s has no lon/lat columns; using a row-level random split", cfg.csv)
        split = random_split(ds.n_samples, cfg.seed, cfg.train_frac, cfg.val_frac)
    for name, idx in zip(SPLIT_FILES, (split.train_idx, split.val_idx, split.test_idx)):
        if len(idx) < 2:
            raise ValidationError(f"{name} split has {len(idx)} rows; adjust fractions or block size")
    scaled, _ = standardize(ds, split.train_idx)
    write_split_csv(split, ds.n_samples, cfg.out / "split.csv")
    for name, part in zip(SPLIT_FILES, split.apply(scaled)):
        write_csv(part, cfg.out / SPLIT_FILES[name])


def _prepare_data(cfg: RunConfig) -> None:
    if cfg.spectrum is not None:
        stage_gen_data(cfg)
    elif cfg.csv is not None:
        stage_split(cfg)


def _load_splits(cfg: RunConfig):
    hint = "pass --spectrum or --csv, or run gen-data/split first"
    return tuple(load_csv(_need(cfg.out / SPLIT_FILES[name], hint)) for name in SPLIT_FILES)


def stage_pca(cfg: RunConfig) -> DataSpectrum:
    train, _, test = _load_splits(cfg)
    write_spectrum_csv(pca_spectrum(train), cfg.out / "spectrum_train.csv")
    ref = pca_spectrum(test)
    write_spectrum_csv(ref, cfg.out / "spectrum.csv")
    return ref


def _reference(cfg: RunConfig) -> np.ndarray:
    recs = read_records(_need(cfg.out / "spectrum.csv", "run the pca stage first"))
    return np.array([r["lambda_over_V"] for r in sorted(recs, key=lambda r: r["rank"])], dtype=float)


def stage_scan(cfg: RunConfig) -> None:
    train, val, test = _load_splits(cfg)
    t_max, t_min = cfg.grid_bounds()
    grid = sc.default_grid(
        pca_spectrum(train).normalized_weights,
        train.total_variance,
        points_per_decade=cfg.points_per_decade,
        t_max=t_max,
        t_min=t_min,
    )
    points = sc.run_scan(train, val, test, grid, cfg.train_config(), cfg.m)
    ranking = sc.rank_modes(points)
    table = sc.scan_table(points, ranking)
    for problem in sc.check_monotone(table):
        log.warning("scan: %s", problem)
    sc.write_scan_csv(table, cfg.out / "scan.csv")
    curves = sc.truncation_curves(points, ranking, test, min(cfg.m, test.n_features))
    sc.write_truncation_csv(table.temperatures, curves, cfg.out / "truncation.csv")
    ckpt = cfg.out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for i, p in enumerate(points):
        p.params.to_json(ckpt / f"T{i:03d}.json")


def _max_rank(cfg: RunConfig, table: sc.ScanTable) -> int:
    spec = cfg.out / "spectrum.csv"
    d = len(read_records(spec)) if spec.exists() else table.n_ranks
    return min(table.n_ranks, d)


def stage_fit(cfg: RunConfig) -> sc.CollapseSpectrum:
    table = sc.read_scan_csv(_need(cfg.out / "scan.csv", "run the scan stage first"))
    spec = sc.collapse_spectrum(table, max_rank=_max_rank(cfg, table))
    sc.write_collapse_csv(spec, cfg.out / "collapse.csv")
    return spec


def stage_utility(cfg: RunConfig) -> sc.UtilitySpectrum:
    table = sc.read_scan_csv(_need(cfg.out / "scan.csv", "run the scan stage first"))
    _, _, test = _load_splits(cfg)
    last = int(np.argmin(table.temperatures))
    params = VaeParams.load(_need(cfg.out / "checkpoints" / f"T{last:03d}.json", "run the scan stage first"))
    u = sc.utility_from_params(params, test, table.order[last], _max_rank(cfg, table), table.temperatures[last])
    sc.write_utility_csv(u, cfg.out / "utility.csv")
    return u


def stage_duality(cfg: RunConfig) -> sc.DualityReport:
    collapse = sc.read_collapse_csv(_need(cfg.out / "collapse.csv", "run the fit stage first"))
    utility = sc.read_utility_csv(_need(cfg.out / "utility.csv", "run the utility stage first"))
    report = sc.duality_report(collapse, utility, _reference(cfg))
    sc.write_duality_csv(report, cfg.out / "duality.csv")
    sc.write_duality_json(report, cfg.out / "duality.json")
    return report


def stage_predict(cfg: RunConfig) -> None:
    if cfg.spectrum is not None:
        lam = np.array(cfg.spectrum, dtype=float)
        if lam.size == 0 or np.any(lam <= 0):
            raise ValidationError("--spectrum entries must be positive")
        lam = np.sort(lam)[::-1]
        spectrum = DataSpectrum(lam, np.eye(lam.size), float(lam.sum()))
    else:
        ref = _reference(cfg)
        spectrum = DataSpectrum(ref, np.eye(ref.size), 1.0)
    t_max, t_min = cfg.grid_bounds()
    grid = sc.default_grid(
        spectrum.normalized_weights,
        spectrum.total_variance,
        points_per_decade=cfg.points_per_decade,
        t_max=t_max,
        t_min=t_min,
    )
    write_prediction_csv(predict_scan(spectrum, grid), cfg.out / "prediction.csv")


def stage_figures(cfg: RunConfig) -> list[Path]:
    table = sc.read_scan_csv(_need(cfg.out / "scan.csv", "run the scan stage first"))
    opt = lambda name: cfg.out / name if (cfg.out / name).exists() else None  # noqa: E731
    collapse = sc.read_collapse_csv(opt("collapse.csv")) if opt("collapse.csv") else None
    duality = sc.read_duality_json(opt("duality.json")) if opt("duality.json") else None
    truncation = sc.read_truncation_csv(opt("truncation.csv")) if opt("truncation.csv") else None
    reference = _reference(cfg) if opt("spectrum.csv") else None
    prediction = None
    if truncation is None:
        prediction = predict_scan(DataSpectrum(reference, np.eye(reference.size), 1.0), table.temperatures) if reference is not None else None
    return render_figures(
        cfg.out, table, prediction, reference, collapse, duality, truncation, max_rank=_max_rank(cfg, table)
    )


def stage_all(cfg: RunConfig) -> sc.DualityReport:
    if cfg.spectrum is None and cfg.csv is None:
        raise MissingInput("all needs a data source: --spectrum or --csv")
    _prepare_data(cfg)
    stage_pca(cfg)
    stage_scan(cfg)
    stage_fit(cfg)
    stage_utility(cfg)
    report = stage_duality(cfg)
    stage_predict(replace(cfg, spectrum=None))
    if cfg.figures:
        stage_figures(cfg)
    return report


def _print_summary(report: sc.DualityReport) -> None:
    s = report.summary
    dev = s["max_deviation"]
    shown = "n/a" if dev is None else f"{dev:.4f}"
    print(f"duality max deviation: {shown} over {s['n_reliable']} reliable rank(s)")


def run_stage(stage: str, cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if stage == "gen-data":
        stage_gen_data(cfg)
    elif stage == "split":
        stage_split(cfg)
    elif stage == "pca":
        stage_pca(cfg)
    elif stage == "scan":
        _prepare_data(cfg)
        stage_scan(cfg)
    elif stage == "fit":
        stage_fit(cfg)
    elif stage == "utility":
        stage_utility(cfg)
    elif stage == "duality":
        _print_summary(stage_duality(cfg))
    elif stage == "predict":
        stage_predict(cfg)
    elif stage == "figures":
        for path in stage_figures(cfg):
            print(path)
    elif stage == "all":
        _print_summary(stage_all(cfg))


def cli_main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except _UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        run_stage(ns.stage, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CollapseScopeError, ArithmeticError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(cli_main())
