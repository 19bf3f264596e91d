"""Hyperspectral cubes: containers, file I/O, a synthetic generator and the
samplers that turn a cube into training/validation/test data.

Cubes are indexed ``(row, col, band)`` and kept in float64 in memory; the
HCUB file format stores float32 payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

MAX_32BIT = float(2**32 - 1)

HCUB_MAGIC = b"HCUB"


class CubeFormatError(ValueError):
    """Raised for malformed or inconsistent cube files."""


@dataclass(frozen=True)
class WavelengthGrid:
    bands: np.ndarray

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=np.float64).ravel()
        if bands.size < 2:
            raise ValueError("a wavelength grid needs at least 2 bands")
        steps = np.diff(bands)
        if np.any(steps <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("wavelength grid must be uniformly spaced")
        bands.setflags(write=False)
        object.__setattr__(self, "bands", bands)

    @classmethod
    def uniform(cls, start=450.0, stop=940.0, count=40):
        return cls(np.linspace(start, stop, count))

    @property
    def band_count(self) -> int:
        return int(self.bands.size)

    @property
    def spacing(self) -> float:
        return float(self.bands[1] - self.bands[0])

    def __eq__(self, other):
        return isinstance(other, WavelengthGrid) and np.array_equal(self.bands, other.bands)

    def __hash__(self):
        return hash(self.bands.tobytes())


@dataclass(frozen=True, eq=False)
class HyperCube:
    """Radiance cube ``data[row, col, band]`` with its wavelength grid."""

    data: np.ndarray
    grid: WavelengthGrid
    max_value: float = MAX_32BIT

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D, got shape {data.shape}")
        if data.shape[2] != self.grid.band_count:
            raise ValueError(
                f"band axis has {data.shape[2]} entries, grid has {self.grid.band_count}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite values")
        if data.size and (data.min() < 0 or data.max() > self.max_value):
            raise ValueError("cube values must lie in [0, max_value]")
        if data.flags.writeable:
            data = data.view()
            data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def spectra(self) -> np.ndarray:
        """All pixel spectra as an ``(rows*cols, bands)`` matrix."""
        return self.data.reshape(-1, self.data.shape[2])


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple[int, int, int] = (64, 64, 40)
    spectral_rank: int = 4
    spatial_correlation_length: float = 8.0
    noise_floor: float = 1e-3
    seed: int = 0
    # peak-ish radiance level; the default sits in the 32-bit regime
    scale: float = 2.0**30
    wavelength_range: tuple[float, float] = (450.0, 940.0)

    def __post_init__(self):
        rows, cols, bands = self.dims
        if min(rows, cols) < 1 or bands < 2:
            raise ValueError(f"invalid dims {self.dims}")
        if not 1 <= self.spectral_rank <= bands:
            raise ValueError("spectral_rank must be in [1, bands]")
        if self.spatial_correlation_length < 0:
            raise ValueError("correlation length must be >= 0")
        if self.noise_floor < 0 or self.scale <= 0:
            raise ValueError("noise_floor must be >= 0 and scale > 0")


@dataclass
class PatchBatch:
    """A stack of ``P x P`` patches with where each one came from.

    ``anchors`` holds top-left (row, col) positions in the source cube and
    ``augments`` holds (mirror, quarter_turns) pairs.
    """

    patches: np.ndarray
    grid: WavelengthGrid
    anchors: np.ndarray
    augments: np.ndarray
    seed: int | None = None
    source: str = ""
    max_value: float = MAX_32BIT

    def __len__(self):
        return self.patches.shape[0]

    def subset(self, idx) -> "PatchBatch":
        idx = np.asarray(idx)
        return PatchBatch(
            self.patches[idx], self.grid, self.anchors[idx], self.augments[idx],
            self.seed, self.source, self.max_value,
        )


# ---------------------------------------------------------------------------
# file I/O


def save_cube(cube: HyperCube, path) -> None:
    rows, cols, bands = cube.shape
    with open(path, "wb") as fh:
        fh.write(HCUB_MAGIC)
        fh.write(struct.pack("<4I", rows, cols, bands, bands))
        fh.write(np.asarray(cube.grid.bands, dtype="<f8").tobytes())
        fh.write(np.asarray(cube.data, dtype="<f4").tobytes(order="C"))


def load_cube(path, format: str = "flat-binary", grid: WavelengthGrid | None = None,
              max_value: float = MAX_32BIT) -> HyperCube:
    """Read a cube from an HCUB file or a headerless CSV of spectra.

    CSV spectra become an ``n x 1 x bands`` cube; since CSV carries no
    wavelengths, ``grid`` defaults to the uniform 450-940 nm grid.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "flat-binary":
        return _load_hcub(path, max_value)
    if format == "csv-spectra":
        return _load_csv(path, grid, max_value)
    raise ValueError(f"unknown cube format {format!r}")


def _load_hcub(path: Path, max_value: float) -> HyperCube:
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != HCUB_MAGIC:
        raise CubeFormatError(f"{path}: missing HCUB header")
    rows, cols, bands, band_count = struct.unpack_from("<4I", raw, 4)
    if band_count != bands:
        raise CubeFormatError(f"{path}: band_count {band_count} != bands dim {bands}")
    off = 20
    wl_end = off + 8 * band_count
    if len(raw) < wl_end:
        raise CubeFormatError(f"{path}: truncated wavelength table")
    wavelengths = np.frombuffer(raw, dtype="<f8", count=band_count, offset=off)
    payload = raw[wl_end:]
    expected = rows * cols * bands
    if len(payload) % 4:
        raise CubeFormatError(f"{path}: payload is not a whole number of float32 values")
    if len(payload) // 4 != expected:
        raise CubeFormatError(
            f"{path}: dimension mismatch, header ({rows},{cols},{bands}) needs "
            f"{expected} values, payload has {len(payload) // 4}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, cols, bands)
    _check_finite(data, path)
    return HyperCube(data, WavelengthGrid(wavelengths), max_value)


def _load_csv(path: Path, grid, max_value) -> HyperCube:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise CubeFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise CubeFormatError(f"{path}: no spectra")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise CubeFormatError(f"{path}:{i + 1}: expected {width} values, got {len(r)}")
    data = np.asarray(rows, dtype=np.float64)[:, None, :]
    _check_finite(data, path)
    if grid is None:
        grid = WavelengthGrid.uniform(count=width)
    return HyperCube(data, grid, max_value)


def _check_finite(data, path):
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        loc = tuple(int(v) for v in bad[0])
        raise CubeFormatError(f"{path}: non-finite value at (row, col, band) = {loc}")


# ---------------------------------------------------------------------------
# synthetic scenes


def _smooth_field(shape, length, rng):
    noise = rng.standard_normal(shape)
    if length <= 0:
        field_ = noise
    else:
        # Gaussian blur of white noise has covariance exp(-d^2 / (4 s^2));
        # choosing s this way puts the 0.5-correlation distance at `length`.
        sigma = length / (2.0 * np.sqrt(np.log(2.0)))
        field_ = ndimage.gaussian_filter(noise, sigma, mode="wrap")
    field_ = field_ - field_.mean()
    std = field_.std()
    return field_ / std if std > 0 else field_


def _smooth_spectrum(wl, rng):
    span = wl[-1] - wl[0]
    spec = np.full(wl.shape, 0.2 + 0.3 * rng.random())
    for _ in range(3):
        centre = wl[0] + span * rng.random()
        width = span * (0.08 + 0.3 * rng.random())
        spec += rng.random() * np.exp(-0.5 * ((wl - centre) / width) ** 2)
    return spec / spec.max()


def synth_cube(spec: SynthSpec) -> HyperCube:
    """Low-rank smooth scene: ``sum_k map_k (x) spectrum_k`` plus white noise."""
    rows, cols, bands = spec.dims
    rng = np.random.default_rng(spec.seed)
    grid = WavelengthGrid.uniform(*spec.wavelength_range, bands)
    spectra = np.stack([_smooth_spectrum(grid.bands, rng) for _ in range(spec.spectral_rank)])
    maps = []
    for k in range(spec.spectral_rank):
        f = _smooth_field((rows, cols), spec.spatial_correlation_length, rng)
        # shift to strictly positive so that no clipping is needed without noise
        maps.append(f - f.min() + 0.5 + rng.random())
    maps = np.stack(maps, axis=-1)
    maps /= maps.sum(axis=-1).max()
    data = spec.scale * (maps @ spectra)
    if spec.noise_floor > 0:
        data = data + spec.noise_floor * spec.scale * rng.standard_normal(data.shape)
        np.clip(data, 0.0, None, out=data)
    return HyperCube(data, grid)


# ---------------------------------------------------------------------------
# partitioning and sampling


def split_columns(cube: HyperCube, train_cols: int, axis: int = 1):
    """Split along ``axis`` into ``[0, train_cols)`` and the remainder (views)."""
    n = cube.shape[axis]
    if not 0 < train_cols < n:
        raise ValueError(f"train_cols must be in (0, {n}), got {train_cols}")
    if axis == 0:
        left, right = cube.data[:train_cols], cube.data[train_cols:]
    elif axis == 1:
        left, right = cube.data[:, :train_cols], cube.data[:, train_cols:]
    else:
        raise ValueError("split axis must be 0 (rows) or 1 (columns)")
    return HyperCube(left, cube.grid, cube.max_value), HyperCube(right, cube.grid, cube.max_value)


def sample_spectra(cube: HyperCube, n: int, seed) -> np.ndarray:
    """``n`` pixel spectra drawn uniformly with replacement, shape ``(n, bands)``."""
    if n <= 0:
        raise ValueError("n must be positive")
    spectra = cube.spectra
    if spectra.shape[0] == 0:
        raise ValueError("cube has no pixels")
    idx = np.random.default_rng(seed).integers(0, spectra.shape[0], size=n)
    return spectra[idx].copy()


def augment(patch: np.ndarray, mirror: int, quarter_turns: int) -> np.ndarray:
    """Mirror (flip columns) first, then rotate by ``quarter_turns * 90`` degrees."""
    out = patch[:, ::-1] if mirror else patch
    return np.rot90(out, quarter_turns, axes=(0, 1))


def sample_patches(cube: HyperCube, n: int, size: int = 10, augment_: bool = True,
                   seed=0, source: str = "") -> PatchBatch:
    rows, cols, _ = cube.shape
    if size > min(rows, cols) or size < 1:
        raise ValueError(f"patch size {size} does not fit a {rows}x{cols} cube")
    n_anchor_r, n_anchor_c = rows - size + 1, cols - size + 1
    n_aug = 8 if augment_ else 1
    capacity = n_anchor_r * n_anchor_c * n_aug
    if n > capacity:
        raise ValueError(f"requested {n} patches but only {capacity} distinct ones exist")
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    seen = set()
    keys = []
    while len(keys) < n:
        need = n - len(keys)
        r = rng.integers(0, n_anchor_r, size=need)
        c = rng.integers(0, n_anchor_c, size=need)
        a = rng.integers(0, n_aug, size=need)
        for key in zip(r.tolist(), c.tolist(), a.tolist()):
            if key not in seen:
                seen.add(key)
                keys.append(key)
    keys = np.asarray(keys, dtype=np.int64)
    anchors = keys[:, :2]
    augments = np.stack([keys[:, 2] // 4, keys[:, 2] % 4], axis=1)
    patches = np.empty((n, size, size, cube.shape[2]))
    for i, ((r0, c0), (m, q)) in enumerate(zip(anchors, augments)):
        patches[i] = augment(cube.data[r0:r0 + size, c0:c0 + size], m, q)
    return PatchBatch(patches, cube.grid, anchors, augments, seed, source, cube.max_value)


def train_val_split(items, val_fraction: float = 0.1, seed=0):
    """Random disjoint split; works on a PatchBatch or an array of samples."""
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be strictly between 0 and 1")
    n = len(items)
    if n == 0:
        raise ValueError("cannot split an empty collection")
    if n < 2:
        raise ValueError("need at least 2 items to split")
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    if isinstance(items, PatchBatch):
        return items.subset(train_idx), items.subset(val_idx)
    items = np.asarray(items)
    return items[train_idx], items[val_idx]
