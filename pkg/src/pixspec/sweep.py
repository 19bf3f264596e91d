"""Design-space sweep over (configuration, number of filters, push-broom steps).

Every cell trains over a learning-rate x l2 grid (plus several random
initialisations for the free layout), keeps the run with the lowest
validation loss and only then touches the test split.  Cells are
independent, write into their own directory and can be resumed.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datacube import HyperCube, PatchBatch, sample_patches, sample_spectra, split_columns, train_val_split
from .fileio import array_digest, atomic_write_text, canonical_json, sha256_bytes, write_csv
from .layout import (
    LayoutPattern, lvf_layout, random_layout, save_layout, snap_layout, squarish_layout,
)
from .measurement import compression_ratio
from .reconstruct import save_reconstructor
from .spectral import Domain, FilterSet, psnr_from_mse, regular_filters, save_filters
from .train import (
    LorentzianConfig, Model, TrainConfig, Trainability, best_val_loss, evaluate, history_rows,
    optimal_filters, train,
)

log = logging.getLogger(__name__)

CONFIGURATIONS = (
    "regular-lvf",
    "best-lvf",
    "best-random-optimized",
    "regular-squarish",
    "optimized-squarish",
)
LEARNING_RATES = (1e-4, 3e-4, 1e-3)
L2_WEIGHTS = (0.0, 1e-4, 1e-3)
BASELINE_STEPS = 40

RUN_HEADER = ("configuration", "n_filters", "n_steps", "lr", "l2", "seed", "val_loss",
              "test_mse", "test_psnr", "compression_ratio", "wall_time_s")
HISTORY_HEADER = ("epoch", "split", "total", "data_mse", "l2_term", "lorentzian_term")


@dataclass
class DataConfig:
    patch_size: int = 10
    n_train_patches: int = 2000
    n_test_patches: int = 300
    train_fraction: float = 0.75
    n_spectra: int = 5000
    n_test_spectra: int = 1000
    augment: bool = True
    snr: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.n_train_patches < 2 or self.n_test_patches < 1:
            raise ValueError("invalid patch counts or size")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if not self.snr > 0:
            raise ValueError("snr must be positive")


@dataclass
class SweepGrid:
    configurations: tuple = CONFIGURATIONS
    n_filters: tuple = tuple(range(2, 20))
    n_steps: tuple = (1, 2, 4)
    learning_rates: tuple = LEARNING_RATES
    l2_weights: tuple = L2_WEIGHTS
    n_random_seeds: int = 5

    def __post_init__(self):
        for name in ("configurations", "n_filters", "n_steps", "learning_rates", "l2_weights"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"empty sweep grid axis: {name}")
        bad = [c for c in self.configurations if c not in CONFIGURATIONS]
        if bad:
            raise ValueError(f"unknown configuration(s) {bad}; valid: {', '.join(CONFIGURATIONS)}")
        if min(self.n_filters) < 1 or min(self.n_steps) < 1 or self.n_random_seeds < 1:
            raise ValueError("n_filters, n_steps and n_random_seeds must be >= 1")

    def cells(self):
        return [Cell(c, n, s) for c in self.configurations for n in self.n_filters
                for s in self.n_steps]


@dataclass(frozen=True)
class Cell:
    configuration: str
    n_filters: int
    n_steps: int

    @property
    def key(self):
        return f"{self.configuration}_n{self.n_filters:02d}_s{self.n_steps:02d}"


class CellFailed(RuntimeError):
    def __init__(self, cell: Cell, cause: Exception):
        super().__init__(f"cell {cell.key}: {cause}")
        self.cell = cell
        self.cause = cause


class FixedClock:
    """Picklable stand-in for ``time.perf_counter`` that always reads ``value``."""

    def __init__(self, value=0.0):
        self.value = value

    def __call__(self):
        return self.value


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class SplitData:
    train: PatchBatch
    val: PatchBatch
    test: PatchBatch
    spectra_train: np.ndarray
    spectra_val: np.ndarray
    spectra_test: np.ndarray
    domain: Domain
    snr: float
    noise_seed: int
    train_cols: int
    manifest: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.train.grid

    @property
    def max_value(self):
        return self.train.max_value

    @property
    def digest(self) -> str:
        return sha256_bytes(canonical_json(self.manifest).encode())


def prepare_data(cube: HyperCube, cfg: DataConfig, val_fraction: float = 0.1) -> SplitData:
    """Column split into train/validation and test regions, then sampling.

    Test patches come from the right-hand columns only and are never augmented.
    """
    cols = cube.shape[1]
    train_cols = int(round(cols * cfg.train_fraction))
    train_cols = min(max(train_cols, 1), cols - 1)
    left, right = split_columns(cube, train_cols)
    s = cfg.seed
    pool = sample_patches(left, cfg.n_train_patches, cfg.patch_size, cfg.augment, seed=[s, 1],
                          source="train")
    train_p, val_p = train_val_split(pool, val_fraction, seed=[s, 2])
    test_p = sample_patches(right, cfg.n_test_patches, cfg.patch_size, False, seed=[s, 3],
                            source="test")
    spectra = sample_spectra(left, cfg.n_spectra, seed=[s, 4])
    spec_tr, spec_va = train_val_split(spectra, val_fraction, seed=[s, 5])
    spec_te = sample_spectra(right, cfg.n_test_spectra, seed=[s, 6])
    manifest = {
        "cube_shape": list(cube.shape),
        "cube_sha256": array_digest(cube.data),
        "train_columns": [0, train_cols],
        "test_columns": [train_cols, cols],
        "data_config": asdict(cfg),
        "val_fraction": val_fraction,
        "splits": {
            "train": {"n": len(train_p), "sha256": array_digest(train_p.patches, train_p.anchors, train_p.augments)},
            "val": {"n": len(val_p), "sha256": array_digest(val_p.patches, val_p.anchors, val_p.augments)},
            "test": {"n": len(test_p), "sha256": array_digest(test_p.patches, test_p.anchors)},
            "spectra_train": {"n": len(spec_tr), "sha256": array_digest(spec_tr)},
            "spectra_val": {"n": len(spec_va), "sha256": array_digest(spec_va)},
            "spectra_test": {"n": len(spec_te), "sha256": array_digest(spec_te)},
        },
    }
    return SplitData(train_p, val_p, test_p, spec_tr, spec_va, spec_te,
                     Domain.for_grid(cube.grid), cfg.snr, cfg.seed, train_cols, manifest)


def check_isolation(data: SplitData) -> bool:
    """True when no test patch overlaps a column used for training or validation."""
    size = data.train.patches.shape[1]
    train_max = max(int(data.train.anchors[:, 1].max()), int(data.val.anchors[:, 1].max())) + size
    # test anchors are relative to the right-hand block
    return train_max <= data.train_cols and int(data.test.anchors[:, 1].min()) >= 0


# ---------------------------------------------------------------------------
# single cell


@dataclass
class RunRow:
    configuration: str
    n_filters: int
    n_steps: int
    lr: float
    l2: float
    seed: int
    val_loss: float
    test_mse: float | None = None
    test_psnr: float | None = None
    compression_ratio: float = 0.0
    wall_time_s: float = 0.0

    def values(self):
        return [getattr(self, k) for k in RUN_HEADER]


@dataclass
class CellResult:
    cell: Cell
    runs: list
    best: RunRow
    model: Model | None = None
    histories: dict = field(default_factory=dict)
    filters: FilterSet | None = None


def best_filters(data: SplitData, n_filters: int, base: TrainConfig, lrs, l2s) -> FilterSet:
    """Spectral-only estimator over the lr x l2 grid, best by validation."""
    best = None
    for lr in lrs:
        for l2 in l2s:
            cfg = replace(base, learning_rate=lr, l2_weight=l2, lorentzian=LorentzianConfig())
            model, hist = _train_spectral(data, n_filters, cfg)
            v = best_val_loss(hist)
            if best is None or v < best[0]:
                best = (v, model.filter_set())
    return best[1]


def _train_spectral(data: SplitData, n_filters, cfg):
    model = Model.spectral(regular_filters(n_filters, data.domain.wl_min, data.domain.wl_max),
                           data.grid, data.snr, data.domain)
    cfg = replace(cfg, trainability=Trainability(filters=True, layout=False, reconstructor=True))
    return train(model, data.spectra_train, cfg, val_data=data.spectra_val)


def initial_model(cell: Cell, data: SplitData, seed: int, best: FilterSet | None):
    """(model, trainability, lorentzian targets) for a configuration."""
    dims = (data.train.patches.shape[1],) * 2
    regular = regular_filters(cell.n_filters, data.domain.wl_min, data.domain.wl_max)
    conf = cell.configuration
    if conf == "regular-lvf":
        layout, tr = lvf_layout(regular, dims), Trainability()
    elif conf == "best-lvf":
        layout, tr = lvf_layout(best, dims), Trainability()
    elif conf == "regular-squarish":
        layout, tr = squarish_layout(regular, dims), Trainability()
    elif conf == "optimized-squarish":
        layout, tr = squarish_layout(regular, dims), Trainability(filters=True)
    elif conf == "best-random-optimized":
        layout, tr = random_layout(dims, data.domain, seed), Trainability(layout=True)
    else:
        raise ValueError(f"unknown configuration {conf!r}; valid: {', '.join(CONFIGURATIONS)}")
    model = Model.pushbroom(layout, data.grid, cell.n_steps, data.snr, data.domain)
    return model, tr


def _train_one(cell: Cell, data: SplitData, cfg: TrainConfig, best: FilterSet | None):
    model, tr = initial_model(cell, data, cfg.seed, best)
    lor = cfg.lorentzian
    if cell.configuration == "best-random-optimized":
        lor = replace(lor, enabled=True, targets=best)
    cfg = replace(cfg, trainability=tr, lorentzian=lor)
    model, hist = train(model, data.train, cfg, val_data=data.val)
    if cell.configuration == "best-random-optimized":
        # snap the free layout onto the target set, then refit R for the fixed design
        snapped = snap_layout(model.layout(), best, data.domain)
        fixed = Model.pushbroom(snapped, data.grid, cell.n_steps, data.snr, data.domain,
                                weights=model.weights)
        cfg = replace(cfg, trainability=Trainability(), lorentzian=LorentzianConfig())
        model, hist2 = train(fixed, data.train, cfg, val_data=data.val)
        hist = hist + hist2
        return model, hist, best_val_loss(hist2)
    return model, hist, best_val_loss(hist)


def run_cell(cell: Cell, data: SplitData, base: TrainConfig, grid: SweepGrid,
             clock=time.perf_counter) -> CellResult:
    best_set = None
    if cell.configuration in ("best-lvf", "best-random-optimized"):
        best_set = best_filters(data, cell.n_filters, base, grid.learning_rates, grid.l2_weights)
    seeds = [base.seed]
    if cell.configuration == "best-random-optimized":
        seeds = [base.seed + k for k in range(grid.n_random_seeds)]
    ratio = compression_ratio(cell.n_steps, BASELINE_STEPS)
    runs, models, histories = [], [], {}
    for lr in grid.learning_rates:
        for l2 in grid.l2_weights:
            for seed in seeds:
                cfg = replace(base, learning_rate=lr, l2_weight=l2, seed=seed)
                t0 = clock()
                model, hist, val = _train_one(cell, data, cfg, best_set)
                row = RunRow(cell.configuration, cell.n_filters, cell.n_steps, lr, l2, seed, val,
                             compression_ratio=ratio, wall_time_s=clock() - t0)
                runs.append(row)
                models.append(model)
                histories[(lr, l2, seed)] = hist
    # selection by validation only; ties keep grid order
    i_best = int(np.argmin([r.val_loss for r in runs]))
    winner = models[i_best]
    test_mse = evaluate(winner, data.test, noise_seed=data.noise_seed)
    best = replace(runs[i_best], test_mse=test_mse,
                   test_psnr=float(psnr_from_mse(test_mse, data.max_value)))
    return CellResult(cell, runs, best, winner, histories, best_set)


# ---------------------------------------------------------------------------
# persistence and the full sweep


def _fmt_tag(v):
    return f"{v:g}"


def write_cell(result: CellResult, cell_dir: Path, data_digest: str, config_hash: str) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    for (lr, l2, seed), hist in result.histories.items():
        write_csv(cell_dir / f"history_lr{_fmt_tag(lr)}_l2{_fmt_tag(l2)}_seed{seed}.csv",
                  HISTORY_HEADER, history_rows(hist))
    if result.model is not None:
        save_layout(result.model.layout(), cell_dir / "layout.json")
        save_reconstructor(result.model.reconstructor(), cell_dir / "reconstructor.rcon")
        fs = result.model.filter_set()
        if fs is not None:
            save_filters(fs, cell_dir / "filters.csv")
    if result.filters is not None:
        save_filters(result.filters, cell_dir / "best_filters.csv")
    record = {
        "cell": asdict(result.cell),
        "data_digest": data_digest,
        "config_hash": config_hash,
        "runs": [asdict(r) for r in result.runs],
        "best": asdict(result.best),
    }
    # written last: its presence marks the cell as complete
    atomic_write_text(cell_dir / "cell.json", json.dumps(record, indent=1) + "\n")


def load_cell(cell: Cell, cell_dir: Path, data_digest: str, config_hash: str) -> CellResult | None:
    path = cell_dir / "cell.json"
    if not path.exists():
        return None
    rec = json.loads(path.read_text())
    if rec.get("data_digest") != data_digest or rec.get("config_hash") != config_hash:
        return None
    runs = [RunRow(**r) for r in rec["runs"]]
    return CellResult(cell, runs, RunRow(**rec["best"]))


def _cell_job(args):
    cell, data, base, grid, clock = args
    try:
        return run_cell(cell, data, base, grid, clock)
    except Exception as exc:  # re-raised with the cell name attached
        raise CellFailed(cell, exc) from exc


def sweep_config_hash(base: TrainConfig, grid: SweepGrid) -> str:
    d = {"train": asdict(base), "grid": asdict(grid)}
    return sha256_bytes(canonical_json(d).encode())


def sweep(data: SplitData, base: TrainConfig, grid: SweepGrid, out_dir=None, workers: int = 1,
          clock=time.perf_counter):
    """Run every cell of ``grid``; returns the list of CellResult in grid order.

    With ``out_dir`` set, completed cells found on disk (same data and
    configuration hashes) are loaded instead of recomputed, and the summary
    CSVs are (re)written.
    """
    cells = grid.cells()
    cfg_hash = sweep_config_hash(base, grid)
    out = Path(out_dir) if out_dir is not None else None
    results: dict = {}
    todo = []
    for cell in cells:
        done = load_cell(cell, out / "cells" / cell.key, data.digest, cfg_hash) if out else None
        if done is not None:
            log.info("cell %s already complete, skipping", cell.key)
            results[cell] = done
        else:
            todo.append(cell)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "split_manifest.json", json.dumps(data.manifest, indent=1) + "\n")

    def finish(res):
        results[res.cell] = res
        if out is not None:
            write_cell(res, out / "cells" / res.cell.key, data.digest, cfg_hash)

    jobs = [(cell, data, base, grid, clock) for cell in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_cell_job, jobs):
                finish(res)
    else:
        for job in jobs:
            finish(_cell_job(job))
    ordered = [results[c] for c in cells]
    if out is not None:
        write_summaries(ordered, out)
    return ordered


def write_summaries(results, out: Path) -> None:
    write_csv(out / "sweep.csv", RUN_HEADER, [r.best.values() for r in results])
    # sub-rows: every hyperparameter run; test columns stay empty except for the selected run
    rows = []
    for r in results:
        for run in r.runs:
            chosen = (run.lr, run.l2, run.seed) == (r.best.lr, r.best.l2, r.best.seed)
            rows.append((r.best if chosen else run).values())
    write_csv(out / "sweep_runs.csv", RUN_HEADER, rows)
    write_csv(out / "config_map.csv", ("n_steps", "n_filters", "best_configuration", "test_psnr"),
              config_map(results))


def config_map(results):
    """Best configuration per (steps, filters) by test PSNR, in sorted order."""
    best = {}
    for r in results:
        k = (r.cell.n_steps, r.cell.n_filters)
        if k not in best or r.best.test_psnr > best[k][1]:
            best[k] = (r.cell.configuration, r.best.test_psnr)
    return [(s, n, c, p) for (s, n), (c, p) in sorted(best.items())]
