"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort.
Failures print one JSON line on stderr, e.g.
``{"status": "error", "code": 2, "kind": "ValueError", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, RunConfig, load_config, parse_int_list
from .datacube import CubeFormatError, HyperCube, load_cube, save_cube, synth_cube
from .fileio import RunManifest, atomic_write_text, write_csv
from .layout import load_layout, save_layout
from .reconstruct import RankDeficientError, load_reconstructor, save_reconstructor
from .spectral import Domain, psnr_from_mse, regular_filters, save_filters
from .sweep import (
    CONFIGURATIONS, HISTORY_HEADER, Cell, CellFailed, SweepGrid, check_isolation, prepare_data,
    run_cell, sweep,
)
from .train import Model, Trainability, TrainingAborted, evaluate, history_rows, train

log = logging.getLogger("pixspec")

METRIC_HEADER = ("configuration", "n_filters", "n_steps", "lr", "l2", "seed", "val_loss",
                 "test_mse", "test_psnr", "compression_ratio")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error(2, "usage", message)
        sys.exit(2)


def _emit_error(code, kind, message):
    sys.stderr.write(json.dumps({"status": "error", "code": code, "kind": kind,
                                 "message": str(message)}) + "\n")


# ---------------------------------------------------------------------------
# shared plumbing


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.synth = replace(cfg.synth, seed=args.seed)
        cfg.data = replace(cfg.data, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, path) -> HyperCube:
    return load_cube(path, format=args.format)


def _fit_data(cube: HyperCube, cfg: RunConfig):
    """Cap patch counts to what the cube can supply, then split and sample."""
    d = cfg.data
    rows, cols, _ = cube.shape
    train_cols = min(max(int(round(cols * d.train_fraction)), 1), cols - 1)
    p = d.patch_size
    if p > rows or p > train_cols or p > cols - train_cols:
        raise UsageError(f"patch size {p} does not fit the {rows}x{cols} cube split at column {train_cols}")
    cap_train = (rows - p + 1) * (train_cols - p + 1) * (8 if d.augment else 1)
    cap_test = (rows - p + 1) * (cols - train_cols - p + 1)
    d = replace(d, n_train_patches=min(d.n_train_patches, cap_train),
                n_test_patches=min(d.n_test_patches, cap_test))
    return prepare_data(cube, d, cfg.train.val_fraction)


def _finish(manifest: RunManifest, out: Path, paths, t0):
    for p in paths:
        manifest.add_artifact(p)
    manifest.wall_time_s = time.perf_counter() - t0
    manifest.write(out / "manifest.json")
    print(json.dumps({"manifest": str(out / "manifest.json"), "artifacts": manifest.artifacts},
                     indent=1, sort_keys=True))


def _seeds(cfg: RunConfig):
    return {"synth": cfg.synth.seed, "data": cfg.data.seed, "train": cfg.train.seed}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    spec = cfg.synth
    over = {}
    if args.dims:
        over["dims"] = tuple(args.dims)
    if args.rank is not None:
        over["spectral_rank"] = args.rank
    if args.correlation_length is not None:
        over["spatial_correlation_length"] = args.correlation_length
    if over:
        spec = replace(spec, **over)
    cfg.synth = spec
    out = _out_dir(args)
    cube = synth_cube(spec)
    path = out / args.name
    save_cube(cube, path)
    _finish(RunManifest("synth", cfg.to_dict(), _seeds(cfg)), out, [path], t0)


def cmd_analyze(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    cube = _load(args, args.cube)
    out = _out_dir(args)
    rows, cols, bands = cube.shape
    band = bands // 2 if args.band_index is None else args.band_index
    if not 0 <= band < bands:
        raise UsageError(f"band index {band} outside 0..{bands - 1}")
    written = []
    summary = {"band_index": band, "fourier_convention": analysis.FOURIER_CONVENTION}
    if min(rows, cols) >= 4:
        prof = analysis.azimuthal_average(analysis.power_spectrum(cube.data[:, :, band]))
        p = out / "power_spectrum.csv"
        write_csv(p, ("radius", "power_unnormalised_fft2", "count", "std"),
                  zip(prof.radii, prof.power, prof.counts, prof.std))
        written.append(p)
        if len(prof.radii) > 3:
            summary["loglog_slope"] = analysis.loglog_slope(prof)
    if rows * cols >= 2:
        curve = analysis.psnr_vs_distance(cube, args.max_pairs, seed=cfg.data.seed)
        p = out / "psnr_distance.csv"
        write_csv(p, ("distance", "mean_psnr", "count"),
                  zip(curve.distances, curve.mean_psnr, curve.counts))
        written.append(p)
        summary.update(mean_spectrum_psnr=curve.baseline, crossover_distance=curve.crossover,
                       infinite_pairs=curve.n_infinite)
        res = analysis.pca(cube.spectra, min(bands, rows * cols))
        p = out / "pca.csv"
        write_csv(p, ("component", "variance", "variance_ratio"),
                  zip(range(1, len(res.variances) + 1), res.variances, res.variance_ratios))
        written.append(p)
        ks, means, n_inf = analysis.psnr_vs_components(cube, res)
        p = out / "psnr_components.csv"
        write_csv(p, ("k", "mean_psnr", "n_infinite"), zip(ks, means, n_inf))
        written.append(p)
        summary["variance_ratios"] = res.variance_ratios.tolist()
        summary["psnr_vs_components"] = means.tolist()
    p = out / "summary.json"
    atomic_write_text(p, json.dumps(summary, indent=1, default=_json_default) + "\n")
    written.append(p)
    m = RunManifest("analyze", cfg.to_dict(), _seeds(cfg))
    m.add_input(args.cube)
    _finish(m, out, written, t0)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def cmd_optimize_filters(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    if args.n_filters < 1:
        raise UsageError("--n-filters must be >= 1")
    cube = _load(args, args.cube)
    data = _fit_data(cube, cfg)
    init = regular_filters(args.n_filters, data.domain.wl_min, data.domain.wl_max)
    model = Model.spectral(init, data.grid, data.snr, data.domain)
    tcfg = replace(cfg.train, trainability=Trainability(filters=not args.fixed_filters,
                                                        layout=False, reconstructor=True))
    model, hist = train(model, data.spectra_train, tcfg, val_data=data.spectra_val)
    out = _out_dir(args)
    fpath, hpath, mpath = out / "filters.csv", out / "history.csv", out / "metrics.csv"
    save_filters(model.filter_set(), fpath)
    write_csv(hpath, HISTORY_HEADER, history_rows(hist))
    rows = []
    for split, x in (("val", data.spectra_val), ("test", data.spectra_test)):
        err = evaluate(model, x, noise_seed=data.noise_seed)
        rows.append((split, len(x), err, psnr_from_mse(err, data.max_value)))
    write_csv(mpath, ("split", "n", "mse", "psnr"), rows)
    m = RunManifest("optimize-filters", cfg.to_dict(), _seeds(cfg))
    m.add_input(args.cube)
    _finish(m, out, [fpath, hpath, mpath], t0)


def cmd_optimize_layout(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    if args.n_filters < 1 or args.n_steps < 1:
        raise UsageError("--n-filters and --n-steps must be >= 1")
    cube = _load(args, args.cube)
    data = _fit_data(cube, cfg)
    grid = SweepGrid(configurations=(args.configuration,), n_filters=(args.n_filters,),
                     n_steps=(args.n_steps,), learning_rates=(cfg.train.learning_rate,),
                     l2_weights=(cfg.train.l2_weight,), n_random_seeds=cfg.sweep.n_random_seeds)
    res = run_cell(Cell(args.configuration, args.n_filters, args.n_steps), data, cfg.train, grid)
    out = _out_dir(args)
    paths = [out / "layout.json", out / "reconstructor.rcon", out / "metrics.csv", out / "history.csv"]
    save_layout(res.model.layout(), paths[0])
    save_reconstructor(res.model.reconstructor(), paths[1])
    b = res.best
    write_csv(paths[2], METRIC_HEADER, [[getattr(b, k) for k in METRIC_HEADER]])
    write_csv(paths[3], HISTORY_HEADER, history_rows(res.histories[(b.lr, b.l2, b.seed)]))
    if res.model.filter_set() is not None:
        paths.append(out / "filters.csv")
        save_filters(res.model.filter_set(), paths[-1])
    m = RunManifest("optimize-layout", cfg.to_dict(), _seeds(cfg))
    m.add_input(args.cube)
    _finish(m, out, paths, t0)


def _tile_patches(cube: HyperCube, rows, cols):
    r_n, c_n = cube.shape[0] // rows, cube.shape[1] // cols
    if r_n == 0 or c_n == 0:
        raise UsageError(f"cube {cube.shape[:2]} is smaller than the {rows}x{cols} detector")
    d = cube.data[:r_n * rows, :c_n * cols]
    d = d.reshape(r_n, rows, c_n, cols, -1).transpose(0, 2, 1, 3, 4)
    return d.reshape(r_n * c_n, rows, cols, -1)


def cmd_evaluate(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    layout = load_layout(args.layout)
    recon = load_reconstructor(args.reconstructor)
    if recon.steps != args.steps:
        raise UsageError(f"--steps {args.steps} does not match the reconstructor ({recon.steps} steps)")
    if (recon.rows, recon.cols) != layout.dims:
        raise UsageError(f"layout {layout.dims} and reconstructor ({recon.rows}, {recon.cols}) disagree")
    labels = args.labels or [Path(c).stem for c in args.cubes]
    if len(labels) != len(args.cubes):
        raise UsageError("need one label per cube")
    snr = cfg.data.snr if args.snr is None else args.snr
    rows_out = []
    m = RunManifest("evaluate", cfg.to_dict(), _seeds(cfg))
    for label, path in zip(labels, args.cubes):
        cube = _load(args, path)
        if cube.shape[2] != recon.bands:
            raise UsageError(f"{path}: {cube.shape[2]} bands, reconstructor expects {recon.bands}")
        phys = layout.filters.params if layout.mode == "indexed" else layout.params
        domain = Domain.for_grid(cube.grid).widened(phys)
        model = Model.pushbroom(layout, cube.grid, recon.steps, snr, domain, weights=recon.weights)
        patches = _tile_patches(cube, *layout.dims)
        err = evaluate(model, patches, noise_seed=cfg.data.seed)
        rows_out.append((label, len(patches), err, psnr_from_mse(err, cube.max_value)))
        m.add_input(path)
    out = _out_dir(args)
    p = out / "metrics.csv"
    write_csv(p, ("label", "n_patches", "mse", "psnr"), rows_out)
    m.add_input(args.layout)
    m.add_input(args.reconstructor)
    _finish(m, out, [p], t0)


def cmd_sweep(args):
    t0 = time.perf_counter()
    cfg = _effective_config(args)
    grid = cfg.sweep
    over = {}
    if args.configurations:
        over["configurations"] = tuple(s.strip() for s in args.configurations.split(",") if s.strip())
    if args.n_filters:
        over["n_filters"] = parse_int_list(args.n_filters)
    if args.n_steps:
        over["n_steps"] = parse_int_list(args.n_steps)
    if over:
        grid = replace(grid, **over)
    cfg.sweep = grid
    cube = _load(args, args.cube)
    data = _fit_data(cube, cfg)
    if not check_isolation(data):
        raise RuntimeError("train and test splits overlap")
    out = _out_dir(args)
    sweep(data, cfg.train, grid, out_dir=out, workers=args.workers)
    m = RunManifest("sweep", cfg.to_dict(), _seeds(cfg))
    m.add_input(args.cube)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    _finish(m, out, files, t0)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="overrides every seed in the configuration")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
    common.add_argument("--format", default="flat-binary", choices=("flat-binary", "csv-spectra"),
                        help="input cube format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pixspec", description="Filter layout design for compressive spectral imaging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic cube")
    s.add_argument("--dims", type=int, nargs=3, metavar=("ROWS", "COLS", "BANDS"))
    s.add_argument("--rank", type=int)
    s.add_argument("--correlation-length", type=float)
    s.add_argument("--name", default="cube.hcub")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("analyze", parents=[common], help="power spectrum, pair PSNR and PCA")
    s.add_argument("cube")
    s.add_argument("--band-index", type=int)
    s.add_argument("--max-pairs", type=int, default=1_000_000)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("optimize-filters", parents=[common], help="spectral-only filter design")
    s.add_argument("cube")
    s.add_argument("--n-filters", type=int, required=True)
    s.add_argument("--fixed-filters", action="store_true", help="keep the regular filters, fit R only")
    s.set_defaults(func=cmd_optimize_filters)

    s = sub.add_parser("optimize-layout", parents=[common], help="train one design configuration")
    s.add_argument("cube")
    s.add_argument("--configuration", required=True, choices=CONFIGURATIONS)
    s.add_argument("--n-filters", type=int, required=True)
    s.add_argument("--n-steps", type=int, required=True)
    s.set_defaults(func=cmd_optimize_layout)

    s = sub.add_parser("evaluate", parents=[common], help="score a design on one or more cubes")
    s.add_argument("cubes", nargs="+")
    s.add_argument("--layout", required=True)
    s.add_argument("--reconstructor", required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--labels", nargs="+")
    s.add_argument("--snr", type=float, help="override the configured SNR ('inf' for noiseless)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="grid over configurations, filters and steps")
    s.add_argument("cube")
    s.add_argument("--configurations", help="comma-separated subset of " + ", ".join(CONFIGURATIONS))
    s.add_argument("--n-filters", help="e.g. 2-19 or 2,4,7")
    s.add_argument("--n-steps", help="e.g. 1,2,4")
    s.set_defaults(func=cmd_sweep)
    return p


NUMERICAL = (TrainingAborted, RankDeficientError, FloatingPointError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CellFailed as exc:
        code = 3 if isinstance(exc.cause, NUMERICAL) else 2
        _emit_error(code, type(exc.cause).__name__, exc)
        return code
    except NUMERICAL as exc:
        _emit_error(3, type(exc).__name__, exc)
        return 3
    except (UsageError, ConfigError, CubeFormatError, FileNotFoundError, ValueError) as exc:
        _emit_error(2, type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
