"""Information-content diagnostics for a cube: spatial power spectra,
pixel-pair similarity versus distance, and PCA of the spectra.

Fourier convention: ``numpy.fft.fft2`` without normalisation, so
``sum(power) == rows * cols * sum(windowed_image ** 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import windows

from .datacube import MAX_32BIT, HyperCube
from .spectral import psnr_from_mse

FOURIER_CONVENTION = "unnormalised fft2; sum(P) = N * sum(windowed^2)"


@dataclass
class RadialProfile:
    radii: np.ndarray
    power: np.ndarray
    counts: np.ndarray
    std: np.ndarray


@dataclass
class PcaResult:
    components: np.ndarray  # (n_components, bands), rows orthonormal
    variances: np.ndarray
    variance_ratios: np.ndarray
    mean_spectrum: np.ndarray

    def project(self, spectra, k: int) -> np.ndarray:
        """Approximate spectra with the mean plus the first ``k`` components."""
        if k > self.components.shape[0]:
            raise ValueError(f"only {self.components.shape[0]} components available")
        centred = np.asarray(spectra) - self.mean_spectrum
        basis = self.components[:k]
        return self.mean_spectrum + (centred @ basis.T) @ basis


@dataclass
class DistanceCurve:
    distances: np.ndarray
    mean_psnr: np.ndarray
    counts: np.ndarray
    baseline: float
    crossover: float | None
    n_infinite: int


def bartlett_hann_2d(rows, cols) -> np.ndarray:
    return np.outer(windows.barthann(rows, sym=True), windows.barthann(cols, sym=True))


def power_spectrum(image) -> np.ndarray:
    """Mean-removed, Bartlett-Hann tapered |FFT|^2 (zero frequency at [0, 0])."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 4:
        raise ValueError("power_spectrum needs a 2-D image of at least 4x4")
    tapered = (image - image.mean()) * bartlett_hann_2d(*image.shape)
    return np.abs(np.fft.fft2(tapered)) ** 2


def frequency_radius(shape) -> np.ndarray:
    kr = np.fft.fftfreq(shape[0]) * shape[0]
    kc = np.fft.fftfreq(shape[1]) * shape[1]
    return np.hypot(kr[:, None], kc[None, :])


def azimuthal_average(ps) -> RadialProfile:
    ps = np.asarray(ps, dtype=np.float64)
    r = np.rint(frequency_radius(ps.shape)).astype(np.int64).ravel()
    vals = ps.ravel()
    counts = np.bincount(r)
    sums = np.bincount(r, weights=vals)
    sq = np.bincount(r, weights=vals**2)
    keep = counts > 0
    counts, sums, sq = counts[keep], sums[keep], sq[keep]
    mean = sums / counts
    var = np.maximum(sq / counts - mean**2, 0.0)
    return RadialProfile(np.nonzero(keep)[0], mean, counts, np.sqrt(var))


def loglog_slope(profile: RadialProfile, r_min=2, r_max=None) -> float:
    r_max = r_max or profile.radii.max()
    sel = (profile.radii >= r_min) & (profile.radii <= r_max) & (profile.power > 0)
    return float(np.polyfit(np.log(profile.radii[sel]), np.log(profile.power[sel]), 1)[0])


def _pair_psnr(a, b, max_value):
    err = np.mean((a - b) ** 2, axis=-1)
    return psnr_from_mse(err, max_value)


def _finite_mean(values):
    finite = np.isfinite(values)
    return (float(values[finite].mean()) if finite.any() else np.inf), int((~finite).sum())


def psnr_vs_distance(cube: HyperCube, max_pairs: int = 1_000_000, seed=0,
                     max_value: float | None = None, chunk: int = 100_000) -> DistanceCurve:
    """Mean pairwise spectral PSNR per (rounded) pixel distance.

    Infinite PSNRs (identical spectra) are excluded from every average and
    counted in ``n_infinite``.
    """
    max_value = cube.max_value if max_value is None else max_value
    rows, cols, _ = cube.shape
    spectra = cube.spectra
    n_pix = spectra.shape[0]
    if n_pix < 2:
        raise ValueError("need at least two pixels")
    rng = np.random.default_rng(seed)
    dmax = int(np.ceil(np.hypot(rows - 1, cols - 1))) + 1
    sums = np.zeros(dmax + 1)
    counts = np.zeros(dmax + 1, dtype=np.int64)
    n_inf = 0
    done = 0
    while done < max_pairs:
        n = min(chunk, max_pairs - done)
        i = rng.integers(0, n_pix, n)
        j = rng.integers(0, n_pix - 1, n)
        j = j + (j >= i)  # distinct pixels
        d = np.rint(np.hypot(i // cols - j // cols, i % cols - j % cols)).astype(np.int64)
        p = _pair_psnr(spectra[i], spectra[j], max_value)
        fin = np.isfinite(p)
        n_inf += int((~fin).sum())
        np.add.at(sums, d[fin], p[fin])
        np.add.at(counts, d[fin], 1)
        done += n
    have = counts > 0
    distances = np.nonzero(have)[0]
    curve = sums[have] / counts[have]
    base_vals = _pair_psnr(spectra, spectra.mean(axis=0), max_value)
    baseline, base_inf = _finite_mean(np.atleast_1d(base_vals))
    below = np.nonzero(curve < baseline)[0]
    crossover = float(distances[below[0]]) if below.size else None
    return DistanceCurve(distances, curve, counts[have], baseline, crossover, n_inf + base_inf)


def pca(spectra, n_components: int | None = None) -> PcaResult:
    spectra = np.asarray(spectra, dtype=np.float64)
    if spectra.ndim != 2 or spectra.shape[0] < 2 or spectra.shape[1] < 2:
        raise ValueError("pca needs at least 2 spectra of at least 2 bands")
    n, b = spectra.shape
    k = b if n_components is None else n_components
    if k > min(n, b):
        raise ValueError(f"cannot extract {k} components from {n} samples x {b} bands")
    mean = spectra.mean(axis=0)
    centred = spectra - mean
    cov = centred.T @ centred / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    # sign convention: largest-magnitude entry of each component is positive
    lead = comps[np.arange(b), np.argmax(np.abs(comps), axis=1)]
    comps *= np.where(lead < 0, -1.0, 1.0)[:, None]
    total = evals.sum()
    ratios = evals / total if total > 0 else np.zeros_like(evals)
    return PcaResult(comps[:k], evals[:k], ratios[:k], mean)


def psnr_vs_components(spectra, result: PcaResult, max_value: float = MAX_32BIT):
    """Mean PSNR (over spectra) of the rank-k approximation for k = 0..n_components.

    Returns (k values, mean PSNR, count of infinite values per k).
    """
    if isinstance(spectra, HyperCube):
        max_value = spectra.max_value
        spectra = spectra.spectra
    spectra = np.asarray(spectra, dtype=np.float64)
    ks = np.arange(result.components.shape[0] + 1)
    means, infs = [], []
    for k in ks:
        vals = _pair_psnr(spectra, result.project(spectra, k), max_value)
        m, n_inf = _finite_mean(np.atleast_1d(vals))
        means.append(m)
        infs.append(n_inf)
    return ks, np.array(means), np.array(infs)
