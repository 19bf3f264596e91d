"""Per-pixel filter arrangements on the detector.

The scan axis is always the row axis: push-broom step ``s`` shows scene pixel
``(r, c)`` through the filter sitting at layout pixel ``((r + s) % rows, c)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import Domain, FilterParams, FilterSet


@dataclass(frozen=True, eq=False)
class LayoutPattern:
    """Either an index map into ``filters`` or free per-pixel (center, fwhm) values."""

    dims: tuple[int, int]
    mode: str
    index: np.ndarray | None = None
    filters: FilterSet | None = None
    params: np.ndarray | None = None
    scan_axis: str = "rows"

    def __post_init__(self):
        rows, cols = self.dims
        if rows < 1 or cols < 1:
            raise ValueError("layout dims must be at least 1x1")
        if self.mode == "indexed":
            if self.index is None or self.filters is None:
                raise ValueError("indexed layout needs an index map and a filter set")
            idx = np.asarray(self.index, dtype=np.int64)
            if idx.shape != (rows, cols):
                raise ValueError(f"index map shape {idx.shape} != dims {self.dims}")
            if idx.min() < 0 or idx.max() >= len(self.filters):
                raise ValueError("index map refers to a filter outside the set")
            idx.setflags(write=False)
            object.__setattr__(self, "index", idx)
        elif self.mode == "continuous":
            p = np.asarray(self.params, dtype=np.float64)
            if p.shape != (rows, cols, 2):
                raise ValueError(f"params shape {p.shape} != {(rows, cols, 2)}")
            if np.any(p[..., 1] <= 0):
                raise ValueError("fwhm values must be positive")
            p = p.copy()
            p.setflags(write=False)
            object.__setattr__(self, "params", p)
        else:
            raise ValueError(f"unknown layout mode {self.mode!r}")
        if self.scan_axis != "rows":
            raise ValueError("only row-axis scanning is supported; transpose the inputs")

    @property
    def rows(self):
        return self.dims[0]

    @property
    def cols(self):
        return self.dims[1]

    def pixel_params(self) -> np.ndarray:
        """(rows, cols, 2) array of physical (center, fwhm) per pixel."""
        if self.mode == "indexed":
            return self.filters.params[self.index]
        return self.params

    def __eq__(self, other):
        if not isinstance(other, LayoutPattern) or other.mode != self.mode or other.dims != self.dims:
            return False
        if self.mode == "indexed":
            return np.array_equal(self.index, other.index) and self.filters == other.filters
        return np.array_equal(self.params, other.params)


@dataclass(frozen=True)
class UnitCell:
    cell_rows: int
    cell_cols: int
    assignment: np.ndarray
    skew: int

    @property
    def n_filters(self):
        return int(self.assignment.max()) + 1


def lvf_layout(filters: FilterSet, dims) -> LayoutPattern:
    """Rows of constant filter, centre wavelength increasing along the scan."""
    if filters is None or len(filters) == 0:
        raise ValueError("empty filter set")
    rows, cols = dims
    ordered = filters.sorted()
    idx = np.repeat((np.arange(rows) % len(ordered))[:, None], cols, axis=1)
    return LayoutPattern((rows, cols), "indexed", index=idx, filters=ordered)


def squarish_unit_cell(n_filters: int) -> UnitCell:
    if n_filters < 1:
        raise ValueError("need at least one filter")
    cell_cols = math.isqrt(n_filters - 1) + 1  # ceil(sqrt(n))
    cell_rows = -(-n_filters // cell_cols)
    size = cell_rows * cell_cols
    assignment = (np.arange(size) % n_filters).reshape(cell_rows, cell_cols)
    skew = 1 if size == n_filters else 0
    return UnitCell(cell_rows, cell_cols, assignment, skew)


def squarish_layout(filters: FilterSet, dims) -> LayoutPattern:
    cell = squarish_unit_cell(len(filters))
    rows, cols = dims
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    idx = cell.assignment[r % cell.cell_rows,
                          (c + cell.skew * (r // cell.cell_rows)) % cell.cell_cols]
    return LayoutPattern((rows, cols), "indexed", index=idx, filters=filters)


def random_layout(dims, domain: Domain, seed) -> LayoutPattern:
    rows, cols = dims
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(rows, cols, 2))
    return LayoutPattern((rows, cols), "continuous", params=domain.unscale_array(u))


def continuous_from(layout: LayoutPattern) -> LayoutPattern:
    """Free-parameter copy of an indexed layout."""
    return LayoutPattern(layout.dims, "continuous", params=layout.pixel_params())


def step_rows(rows: int, step: int) -> np.ndarray:
    """Layout row seen by each scene row at push-broom step ``step``."""
    return (np.arange(rows) + step) % rows


def filter_at(layout: LayoutPattern, r: int, c: int, s: int = 0) -> FilterParams:
    if not (0 <= r < layout.rows and 0 <= c < layout.cols) or s < 0:
        raise IndexError(f"pixel ({r}, {c}) step {s} out of bounds for {layout.dims}")
    center, fwhm = layout.pixel_params()[(r + s) % layout.rows, c]
    return FilterParams(float(center), float(fwhm))


def snap_layout(layout: LayoutPattern, filters: FilterSet, domain: Domain) -> LayoutPattern:
    """Assign every pixel the nearest set filter, distance taken in scaled space."""
    if len(filters) == 0:
        raise ValueError("empty filter set")
    u_pix = domain.scale_array(layout.pixel_params())
    u_set = domain.scale_array(filters.params)
    d2 = ((u_pix[:, :, None, :] - u_set[None, None, :, :]) ** 2).sum(-1)
    # argmin returns the first minimum, i.e. the lowest index on ties
    idx = np.argmin(d2, axis=-1)
    return LayoutPattern(layout.dims, "indexed", index=idx, filters=filters)


# ---------------------------------------------------------------------------
# export: JSON text, floats written with repr so the round trip is exact


def layout_to_dict(layout: LayoutPattern) -> dict:
    out = {
        "format": "pixspec-layout",
        "version": 1,
        "dims": list(layout.dims),
        "mode": layout.mode,
        "scan_axis": layout.scan_axis,
    }
    if layout.mode == "indexed":
        out["filters"] = [[float(c), float(w)] for c, w in layout.filters.params]
        out["pixels"] = layout.index.tolist()
    else:
        out["pixels"] = layout.params.tolist()
    return out


def layout_from_dict(d: dict) -> LayoutPattern:
    if d.get("format") != "pixspec-layout":
        raise ValueError("not a layout file")
    dims = tuple(d["dims"])
    if d["mode"] == "indexed":
        return LayoutPattern(dims, "indexed", index=np.array(d["pixels"], dtype=np.int64),
                             filters=FilterSet(d["filters"]), scan_axis=d["scan_axis"])
    return LayoutPattern(dims, "continuous", params=np.array(d["pixels"], dtype=np.float64),
                         scan_axis=d["scan_axis"])


def save_layout(layout: LayoutPattern, path) -> None:
    Path(path).write_text(json.dumps(layout_to_dict(layout), indent=1) + "\n")


def load_layout(path) -> LayoutPattern:
    return layout_from_dict(json.loads(Path(path).read_text()))
