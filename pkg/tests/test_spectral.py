import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pixspec.datacube import MAX_32BIT, WavelengthGrid
from pixspec.spectral import (
    Domain, FilterParams, FilterSet, ScaledParams, load_filters, mse, psnr, psnr_from_mse,
    regular_filters, save_filters, scale, transmission, transmission_grad, transmission_matrix,
    unscale,
)

centers = st.floats(450, 940)
widths = st.floats(12.6, 490)


def test_transmission_landmarks():
    f = FilterParams(600.0, 50.0)
    lam = np.array([600.0, 575.0, 625.0, 550.0, 650.0])
    t = transmission(f, lam)
    assert t[0] == 1.0
    np.testing.assert_allclose(t[1:3], 0.5, rtol=1e-15)
    # independent: exp(-4 ln 2) = 2^-4
    np.testing.assert_allclose(t[3:], 2.0**-4, rtol=1e-14)


@given(centers, widths, st.floats(0, 300))
def test_transmission_reflection(c, w, d):
    f = FilterParams(c, w)
    a, b = transmission(f, np.array([c + d, c - d]))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


@given(centers, widths, st.floats(1, 300), st.floats(1.01, 3))
def test_transmission_monotone_in_fwhm(c, w, d, k):
    lam = np.array([c + d])
    lo = transmission(FilterParams(c, w), lam)[0]
    hi = transmission(FilterParams(c, w * k), lam)[0]
    assert hi > lo or (hi == lo == 0.0) or hi == 1.0


def test_transmission_grad_at_peak():
    dc, dw = transmission_grad(FilterParams(700, 40), np.array([700.0]))
    assert dc[0] == 0 and dw[0] == 0


@given(centers, widths)
def test_transmission_grad_finite_difference(c, w):
    grid = WavelengthGrid.uniform()
    f = FilterParams(c, w)
    dc, dw = transmission_grad(f, grid)
    h = 1e-4
    fd_c = (transmission(FilterParams(c + h, w), grid) - transmission(FilterParams(c - h, w), grid)) / (2 * h)
    fd_w = (transmission(FilterParams(c, w + h), grid) - transmission(FilterParams(c, w - h), grid)) / (2 * h)
    scale_c = max(np.abs(dc).max(), 1e-12)
    scale_w = max(np.abs(dw).max(), 1e-12)
    assert np.abs(fd_c - dc).max() / scale_c < 1e-6
    assert np.abs(fd_w - dw).max() / scale_w < 1e-6
    assert np.all(dw >= 0)


def test_transmission_matrix_matches_single():
    grid = WavelengthGrid.uniform()
    params = np.array([[500.0, 30.0], [800.0, 100.0]])
    t, dc, dw = transmission_matrix(params, grid.bands)
    for i, (c, w) in enumerate(params):
        np.testing.assert_array_equal(t[i], transmission(FilterParams(c, w), grid))
        g = transmission_grad(FilterParams(c, w), grid)
        np.testing.assert_allclose(dc[i], g[0], rtol=1e-14)
        np.testing.assert_allclose(dw[i], g[1], rtol=1e-14)


def test_scale_endpoints():
    d = Domain()
    assert scale(FilterParams(450.0, 100.0), d).u_center == -1.0
    assert scale(FilterParams(695.0, 100.0), d).u_center == 0.0
    assert unscale(ScaledParams(1.7, 0.0), d).center == 940.0
    assert unscale(ScaledParams(0.0, -3.0), d).fwhm == d.fwhm_min


@given(centers, widths)
def test_scale_round_trip(c, w):
    d = Domain()
    back = unscale(scale(FilterParams(c, w), d), d)
    assert back.center == pytest.approx(c, rel=1e-14)
    assert back.fwhm == pytest.approx(w, rel=1e-14)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_unscale_clamping_idempotent(a, b):
    d = Domain()
    f = unscale(ScaledParams(a, b), d)
    assert d.contains(f)
    u = scale(f, d)
    assert unscale(u, d) == f


def test_degenerate_domain():
    with pytest.raises(ValueError):
        Domain(500, 500, 10, 20)
    with pytest.raises(ValueError):
        Domain(450, 940, 20, 20)


def test_domain_for_default_grid():
    d = Domain.for_grid(WavelengthGrid.uniform())
    assert d.fwhm_min == pytest.approx(490 / 39) and d.fwhm_max == 490


def test_regular_filters():
    two = regular_filters(2)
    np.testing.assert_allclose(two.fwhms, [245.0, 245.0])
    np.testing.assert_allclose(two.centers, [572.5, 817.5])
    one = regular_filters(1)
    assert one[0] == FilterParams(695.0, 490.0)
    with pytest.raises(ValueError):
        regular_filters(0)


def test_filterset_validation():
    with pytest.raises(ValueError):
        FilterSet([])
    with pytest.raises(ValueError):
        FilterSet([(500, 0)])
    with pytest.raises(ValueError):
        FilterParams(500, -1)
    fs = FilterSet([(800, 10), (500, 20)])
    assert list(fs.sorted().centers) == [500, 800]


def test_mse_examples():
    assert mse([1, 2], [1, 2]) == 0
    assert mse([2, 0], [0, 0]) == 2
    with pytest.raises(ValueError):
        mse([1, 2], [1])


def test_mse_against_loop(rng):
    y, p = rng.normal(size=40), rng.normal(size=40)
    acc = 0.0
    for a, b in zip(y, p):
        acc += (a - b) * (a - b)
    assert mse(y, p) == pytest.approx(acc / 40, rel=1e-12)


def test_psnr_examples():
    assert psnr_from_mse(MAX_32BIT**2) == pytest.approx(0.0, abs=1e-12)
    assert psnr([1.0, 2.0], [1.0, 2.0]) == math.inf
    with pytest.raises(ValueError):
        psnr([1.0], [2.0], max_value=0)
    assert psnr([3.0], [1.0], max_value=2.0) == pytest.approx(0.0, abs=1e-12)


def test_filter_file_round_trip(tmp_path):
    fs = FilterSet([(512.123456, 33.5), (700.0, 120.25)])
    p = tmp_path / "f.csv"
    save_filters(fs, p)
    assert p.read_text().splitlines()[0] == "center_nm,fwhm_nm"
    assert load_filters(p) == fs


def test_domain_widened_keeps_fixed_design():
    dom = Domain(450, 940, 70, 490)
    w = dom.widened([[480.0, 61.25], [500.0, 100.0]])
    assert (w.wl_min, w.wl_max, w.fwhm_min, w.fwhm_max) == (450, 940, 61.25, 490)
    assert dom.widened([[460.0, 80.0]]) == dom
    u = w.scale_array([[480.0, 61.25]])
    np.testing.assert_allclose(w.unscale_array(u), [[480.0, 61.25]])
