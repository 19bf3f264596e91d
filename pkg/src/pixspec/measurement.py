"""Push-broom forward model: filter layout -> detector frames (+ Gaussian noise).

A measurement is identified by a (layout pixel, scene pixel) pair.  Frames are
serialised step-major, then row-major, so measurement ``s*M + m`` is scene
pixel ``m`` seen at step ``s``.  The same pair list drives the batched forward
pass, its gradient and the explicit matrix ``H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datacube import HyperCube, WavelengthGrid
from .layout import LayoutPattern, step_rows
from .spectral import transmission_matrix

DEFAULT_H_CAP = 50_000_000


@dataclass(frozen=True)
class MeasurementSpec:
    steps: int = 1
    snr: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.snr > 0:
            raise ValueError("snr must be positive (use math.inf for noiseless)")

    @property
    def noiseless(self):
        return math.isinf(self.snr)


@dataclass
class Frames:
    values: np.ndarray  # (steps, rows, cols)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("frames are (steps, rows, cols)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("frames contain non-finite values")

    @property
    def steps(self):
        return self.values.shape[0]

    def serialize(self) -> np.ndarray:
        return self.values.reshape(-1)


def pushbroom_plan(rows: int, cols: int, steps: int):
    """(layout_pixel, scene_pixel) index arrays, each of length ``steps*rows*cols``."""
    m = rows * cols
    scene = np.arange(m)
    lp = np.empty(steps * m, dtype=np.int64)
    for s in range(steps):
        lrow = step_rows(rows, s)
        lp[s * m:(s + 1) * m] = (lrow[:, None] * cols + np.arange(cols)[None, :]).ravel()
    sp = np.tile(scene, steps)
    return lp, sp


def measure(t_pix, x, lp, sp):
    """Batched detector values ``y[k, j] = sum_b T[lp[j], b] * x[k, sp[j], b]``.

    ``t_pix`` is ``(layout_pixels, bands)``, ``x`` is ``(K, scene_pixels, bands)``.
    """
    return np.einsum("jb,kjb->kj", t_pix[lp], x[:, sp, :], optimize=True)


def measure_grad_t(g_y, x, lp, sp, n_layout_pixels):
    """Pull a gradient on ``y`` back onto the per-layout-pixel transmissions."""
    contrib = np.einsum("kj,kjb->jb", g_y, x[:, sp, :], optimize=True)
    out = np.zeros((n_layout_pixels, x.shape[2]))
    np.add.at(out, lp, contrib)
    return out


def noise_sigma(y, snr) -> float:
    if math.isinf(snr):
        return 0.0
    return float(np.mean(np.abs(y))) / snr


def forward(patch: HyperCube, layout: LayoutPattern, spec: MeasurementSpec) -> Frames:
    """Noise-free frames of a static scene patch over ``spec.steps`` steps."""
    rows, cols, bands = patch.shape
    if (rows, cols) != layout.dims:
        raise ValueError(f"patch {rows}x{cols} does not match layout {layout.dims}")
    t, _, _ = transmission_matrix(layout.pixel_params().reshape(-1, 2), patch.grid.bands)
    lp, sp = pushbroom_plan(rows, cols, spec.steps)
    y = measure(t, patch.data.reshape(1, rows * cols, bands), lp, sp)
    return Frames(y.reshape(spec.steps, rows, cols))


def add_noise(frames: Frames, spec: MeasurementSpec) -> Frames:
    """Add i.i.d. Gaussian noise with sigma = mean(|y|) / snr."""
    if spec.noiseless:
        return Frames(frames.values.copy())
    rng = np.random.default_rng(spec.seed)
    sigma = noise_sigma(frames.values, spec.snr)
    return Frames(frames.values + sigma * rng.standard_normal(frames.values.shape))


def build_H(layout: LayoutPattern, grid: WavelengthGrid, steps: int, cap: int = DEFAULT_H_CAP):
    """Dense measurement matrix of shape ``(steps*M, M*bands)``."""
    rows, cols = layout.dims
    m, b = rows * cols, grid.band_count
    if steps * m * m * b > cap:
        raise MemoryError(
            f"H would have {steps * m * m * b} entries (cap {cap}); use forward() instead"
        )
    t, _, _ = transmission_matrix(layout.pixel_params().reshape(-1, 2), grid.bands)
    lp, sp = pushbroom_plan(rows, cols, steps)
    h = np.zeros((steps * m, m * b))
    for j in range(steps * m):
        h[j, sp[j] * b:(sp[j] + 1) * b] = t[lp[j]]
    return h


def compression_ratio(steps: int, baseline_steps: int = 40) -> float:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return baseline_steps / steps


def save_frames_csv(frames: Frames, path) -> None:
    lines = ["step,row,col,value"]
    s_, r_, c_ = frames.values.shape
    for s in range(s_):
        for r in range(r_):
            for c in range(c_):
                lines.append(f"{s},{r},{c},{frames.values[s, r, c]:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")
