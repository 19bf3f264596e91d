"""Dense, bias-free linear reconstructor and its closed-form ridge counterpart."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .datacube import HyperCube, WavelengthGrid
from .measurement import Frames

RCON_MAGIC = b"RCON"


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass
class LinearReconstructor:
    """``weights`` maps serialised frames (steps*M) to a serialised cube (M*bands)."""

    weights: np.ndarray
    rows: int
    cols: int
    bands: int
    steps: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        m = self.rows * self.cols
        if self.weights.shape != (m * self.bands, self.steps * m):
            raise ValueError(
                f"weights shape {self.weights.shape} inconsistent with "
                f"dims ({self.rows}, {self.cols}, {self.bands}, steps={self.steps})"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite reconstructor weights")

    @property
    def dims(self):
        return self.rows, self.cols, self.bands, self.steps


def init_zero(rows, cols, bands, steps) -> LinearReconstructor:
    m = rows * cols
    return LinearReconstructor(np.zeros((m * bands, steps * m)), rows, cols, bands, steps)


def reconstruct(r: LinearReconstructor, y, grid: WavelengthGrid | None = None):
    """``R @ y`` reshaped to a cube.

    Returns a :class:`HyperCube` when ``grid`` is given, else the raw
    ``(rows, cols, bands)`` array (estimates may be slightly negative).
    """
    vec = y.serialize() if isinstance(y, Frames) else np.asarray(y, dtype=np.float64).ravel()
    if vec.size != r.weights.shape[1]:
        raise ValueError(f"expected {r.weights.shape[1]} frame values, got {vec.size}")
    est = (r.weights @ vec).reshape(r.rows, r.cols, r.bands)
    if grid is None:
        return est
    return HyperCube(np.clip(est, 0.0, None), grid)


def closed_form_reconstructor(y_train, x_train, l2_weight: float, dims=None,
                              pivot_tol: float = 1e-12) -> LinearReconstructor | np.ndarray:
    """Ridge solution ``R = X Y^T (Y Y^T + l2_weight * n * I)^-1``.

    ``y_train`` is ``(n, steps*M)`` and ``x_train`` is ``(n, M*bands)``, one
    pair per row.  ``dims`` = (rows, cols, bands, steps) wraps the result in a
    LinearReconstructor; otherwise the bare matrix is returned.
    """
    y = np.atleast_2d(np.asarray(y_train, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    if y.shape[0] != x.shape[0] or y.shape[0] < 1:
        raise ValueError("need at least one (y, x) pair with matching counts")
    if l2_weight < 0:
        raise ValueError("l2_weight must be >= 0")
    n = y.shape[0]
    gram = y.T @ y
    gram[np.diag_indices_from(gram)] += l2_weight * n
    rhs = y.T @ x  # (SM, MB)
    try:
        c, low = linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(f"Gram matrix is not positive definite: {exc}") from None
    pivots = np.diag(c) ** 2
    if pivots.min() <= pivot_tol * np.max(np.diag(gram)):
        raise RankDeficientError(
            f"rank-deficient system: smallest pivot {pivots.min():.3e} relative to "
            f"{np.max(np.diag(gram)):.3e}; add l2 regularisation"
        )
    w = linalg.cho_solve((c, low), rhs, check_finite=False).T
    if dims is None:
        return w
    return LinearReconstructor(w, *dims)


def ridge_objective(w, y_train, x_train, l2_weight) -> float:
    """``sum ||x - R y||^2 + l2_weight * n * ||R||_F^2``, the quantity the ridge solve minimises."""
    y = np.atleast_2d(y_train)
    x = np.atleast_2d(x_train)
    resid = x - y @ w.T
    return float(np.sum(resid**2) + l2_weight * y.shape[0] * np.sum(w**2))


def save_reconstructor(r: LinearReconstructor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(RCON_MAGIC)
        fh.write(struct.pack("<4I", r.rows, r.cols, r.bands, r.steps))
        fh.write(np.ascontiguousarray(r.weights, dtype="<f8").tobytes())


def load_reconstructor(path) -> LinearReconstructor:
    raw = Path(path).read_bytes()
    if raw[:4] != RCON_MAGIC or len(raw) < 20:
        raise ValueError(f"{path}: not an RCON file")
    rows, cols, bands, steps = struct.unpack_from("<4I", raw, 4)
    m = rows * cols
    count = m * bands * steps * m
    if len(raw) - 20 != 8 * count:
        raise ValueError(f"{path}: payload size does not match header dims")
    w = np.frombuffer(raw, dtype="<f8", offset=20).reshape(m * bands, steps * m).copy()
    return LinearReconstructor(w, rows, cols, bands, steps)
