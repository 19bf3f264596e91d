"""Gaussian passband model, parameter scaling and image-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datacube import MAX_32BIT, WavelengthGrid

FOUR_LN2 = 4.0 * math.log(2.0)


@dataclass(frozen=True)
class FilterParams:
    center: float
    fwhm: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")


@dataclass(frozen=True)
class ScaledParams:
    u_center: float
    u_fwhm: float


@dataclass(frozen=True)
class Domain:
    """Box of admissible (center, fwhm) values, mapped affinely onto [-1, 1]^2."""

    wl_min: float = 450.0
    wl_max: float = 940.0
    fwhm_min: float = 490.0 / 39.0
    fwhm_max: float = 490.0

    def __post_init__(self):
        if not (self.wl_min < self.wl_max and self.fwhm_min < self.fwhm_max):
            raise ValueError("degenerate parameter domain")
        if self.fwhm_min <= 0:
            raise ValueError("fwhm_min must be positive")

    @classmethod
    def for_grid(cls, grid: WavelengthGrid) -> "Domain":
        lo, hi = float(grid.bands[0]), float(grid.bands[-1])
        return cls(lo, hi, grid.spacing, hi - lo)

    def widened(self, phys) -> "Domain":
        """Smallest enlargement containing every (center, fwhm) row of ``phys``.

        Used for fixed designs read from disk, which must not be clamped.
        """
        p = np.asarray(phys, dtype=np.float64).reshape(-1, 2)
        return Domain(min(self.wl_min, p[:, 0].min()), max(self.wl_max, p[:, 0].max()),
                      min(self.fwhm_min, p[:, 1].min()), max(self.fwhm_max, p[:, 1].max()))

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.wl_min, self.fwhm_min])

    @property
    def half_width(self) -> np.ndarray:
        """d(physical)/d(scaled) for (center, fwhm)."""
        return 0.5 * np.array([self.wl_max - self.wl_min, self.fwhm_max - self.fwhm_min])

    def contains(self, f: FilterParams) -> bool:
        return (self.wl_min <= f.center <= self.wl_max
                and self.fwhm_min <= f.fwhm <= self.fwhm_max)

    # vectorised forms on (..., 2) arrays of (center, fwhm)
    def scale_array(self, phys) -> np.ndarray:
        return (np.asarray(phys, dtype=np.float64) - self.lo) / self.half_width - 1.0

    def unscale_array(self, u) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=np.float64), -1.0, 1.0)
        return self.lo + (u + 1.0) * self.half_width


class FilterSet:
    """Ordered list of Gaussian passbands; stored as an ``(N, 2)`` array."""

    def __init__(self, filters):
        arr = np.array(
            [[f.center, f.fwhm] if isinstance(f, FilterParams) else list(f) for f in filters],
            dtype=np.float64,
        ).reshape(-1, 2)
        if arr.shape[0] < 1:
            raise ValueError("a filter set needs at least one filter")
        if np.any(arr[:, 1] <= 0):
            raise ValueError("all fwhm values must be positive")
        arr.setflags(write=False)
        self.params = arr

    def __len__(self):
        return self.params.shape[0]

    def __iter__(self):
        return (FilterParams(float(c), float(w)) for c, w in self.params)

    def __getitem__(self, i) -> FilterParams:
        c, w = self.params[i]
        return FilterParams(float(c), float(w))

    def __eq__(self, other):
        return isinstance(other, FilterSet) and np.array_equal(self.params, other.params)

    def __repr__(self):
        inner = ", ".join(f"({c:.3f}, {w:.3f})" for c, w in self.params)
        return f"FilterSet([{inner}])"

    @property
    def centers(self):
        return self.params[:, 0]

    @property
    def fwhms(self):
        return self.params[:, 1]

    def sorted(self) -> "FilterSet":
        order = np.argsort(self.params[:, 0], kind="stable")
        return FilterSet(self.params[order])


def transmission(f, grid: WavelengthGrid) -> np.ndarray:
    """Peak-normalised Gaussian passband sampled on ``grid``."""
    lam = grid.bands if isinstance(grid, WavelengthGrid) else np.asarray(grid)
    return np.exp(-FOUR_LN2 * (lam - f.center) ** 2 / f.fwhm**2)


def transmission_grad(f, grid: WavelengthGrid):
    """Return ``(dT/dcenter, dT/dfwhm)`` on the grid."""
    lam = grid.bands if isinstance(grid, WavelengthGrid) else np.asarray(grid)
    t = transmission(f, lam)
    d = lam - f.center
    return t * 2 * FOUR_LN2 * d / f.fwhm**2, t * 2 * FOUR_LN2 * d**2 / f.fwhm**3


def transmission_matrix(params, lam):
    """Transmissions and their parameter derivatives for many filters.

    ``params`` is ``(..., 2)``; all three outputs are ``(..., bands)``.
    """
    params = np.asarray(params, dtype=np.float64)
    c = params[..., 0:1]
    w = params[..., 1:2]
    d = lam - c
    t = np.exp(-FOUR_LN2 * d**2 / w**2)
    dt_dc = t * (2 * FOUR_LN2) * d / w**2
    dt_dw = t * (2 * FOUR_LN2) * d**2 / w**3
    return t, dt_dc, dt_dw


def scale(f: FilterParams, domain: Domain) -> ScaledParams:
    u = domain.scale_array([f.center, f.fwhm])
    return ScaledParams(float(u[0]), float(u[1]))


def unscale(u: ScaledParams, domain: Domain) -> FilterParams:
    p = domain.unscale_array([u.u_center, u.u_fwhm])
    return FilterParams(float(p[0]), float(p[1]))


def regular_filters(n: int, wl_min: float = 450.0, wl_max: float = 940.0) -> FilterSet:
    """``n`` identical passbands tiling the range, each spaced by its FWHM."""
    if n < 1:
        raise ValueError("need at least one filter")
    fwhm = (wl_max - wl_min) / n
    centers = wl_min + (np.arange(n) + 0.5) * fwhm
    return FilterSet(np.column_stack([centers, np.full(n, fwhm)]))


def mse(y, p) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {p.shape}")
    if y.size == 0:
        raise ValueError("mse of empty arrays")
    return float(np.mean((y - p) ** 2))


def psnr_from_mse(err, max_value: float = MAX_32BIT):
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    err = np.asarray(err, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(max_value**2 / err)
    return float(out) if out.ndim == 0 else out


def psnr(y, p, max_value: float = MAX_32BIT) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when ``y == p``."""
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    return psnr_from_mse(mse(y, p), max_value)


# ---------------------------------------------------------------------------
# design file: header line then one "center_nm,fwhm_nm" record per filter


def save_filters(filters: FilterSet, path) -> None:
    lines = ["center_nm,fwhm_nm"]
    lines += [f"{c:.6f},{w:.6f}" for c, w in filters.params]
    Path(path).write_text("\n".join(lines) + "\n")


def load_filters(path) -> FilterSet:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != "center_nm,fwhm_nm":
        raise ValueError(f"{path}: not a filter design file")
    return FilterSet([[float(v) for v in ln.split(",")] for ln in lines[1:]])
