import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weatherkd.errors import ValidationError
from weatherkd.metrics import (
    LUMA_WEIGHTS,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    batch_psnr,
    batch_ssim,
    gaussian_window,
    psnr,
    quantize,
    ssim,
    to_luma,
)
from weatherkd.utils import rng_from


def test_psnr_closed_form_mse():
    # mse 0.01 against peak 1.0 is exactly 20 dB
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_closed_form_one_level():
    a = np.zeros((16, 16, 3))
    b = np.full((16, 16, 3), 1.0 / 255.0)
    assert psnr(a, b) == pytest.approx(20.0 * math.log10(255.0), abs=1e-9)


def test_psnr_identical_is_inf():
    a = rng_from(1).uniform(size=(8, 8, 3))
    assert psnr(a, a.copy()) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(ValidationError):
        psnr(np.zeros((4, 4)), np.zeros((5, 5)))


def test_psnr_quantized_snaps_to_grid():
    a = np.full((8, 8), 0.5)
    b = a + 0.4 / 255.0  # rounds back onto a's level
    assert psnr(a, b, use_quantized=True) == math.inf


def test_psnr_luma_uses_bt601():
    a = np.zeros((8, 8, 3))
    b = np.zeros((8, 8, 3))
    b[:, :, 0] = 0.1  # red-only error
    expected = 10 * math.log10(1.0 / (0.1 * LUMA_WEIGHTS[0]) ** 2)
    assert psnr(a, b, use_luma=True) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_psnr_nonnegative_and_symmetric(seed):
    rng = rng_from(seed)
    a = rng.uniform(size=(6, 6))
    b = rng.uniform(size=(6, 6))
    assert psnr(a, b) >= 0.0  # peak-1 images can't exceed mse 1
    assert psnr(a, b) == psnr(b, a)


def test_quantize_idempotent():
    x = rng_from(2).uniform(size=(5, 5))
    q = quantize(x)
    np.testing.assert_array_equal(quantize(q), q)
    assert np.abs(q - x).max() <= 0.5 / 255.0


def test_to_luma_weights():
    img = np.zeros((2, 2, 3))
    img[:, :, 1] = 1.0
    np.testing.assert_allclose(to_luma(img), LUMA_WEIGHTS[1])
    with pytest.raises(ValidationError):
        to_luma(np.zeros((2, 2, 4)))


def test_gaussian_window_normalized():
    w = gaussian_window()
    assert w.shape == (SSIM_WINDOW, SSIM_WINDOW)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(w, w.T, atol=1e-15)


def test_ssim_self_is_one():
    a = rng_from(3).uniform(size=(16, 16, 3))
    assert ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetry():
    rng = rng_from(4)
    a = rng.uniform(size=(14, 14))
    b = rng.uniform(size=(14, 14))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9


def test_ssim_less_than_one_for_different():
    rng = rng_from(5)
    a = rng.uniform(size=(16, 16))
    b = np.clip(a + rng.normal(0, 0.2, size=a.shape), 0, 1)
    assert ssim(a, b) < 0.99


def test_ssim_window_size_guard():
    with pytest.raises(ValidationError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def brute_force_ssim_11(a, b):
    """Single-window SSIM on an 11x11 pair, written with explicit loops."""
    x, y = to_luma(a), to_luma(b)
    half = (SSIM_WINDOW - 1) / 2.0
    kernel = np.empty((SSIM_WINDOW, SSIM_WINDOW))
    for i in range(SSIM_WINDOW):
        for j in range(SSIM_WINDOW):
            kernel[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2)
                                    / (2 * SSIM_SIGMA ** 2))
    kernel /= kernel.sum()
    mx = my = 0.0
    for i in range(SSIM_WINDOW):
        for j in range(SSIM_WINDOW):
            mx += kernel[i, j] * x[i, j]
            my += kernel[i, j] * y[i, j]
    vx = vy = cov = 0.0
    for i in range(SSIM_WINDOW):
        for j in range(SSIM_WINDOW):
            vx += kernel[i, j] * (x[i, j] - mx) ** 2
            vy += kernel[i, j] * (y[i, j] - my) ** 2
            cov += kernel[i, j] * (x[i, j] - mx) * (y[i, j] - my)
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def test_ssim_matches_brute_force_oracle():
    for seed in range(5):
        rng = rng_from(seed, "oracle")
        a = rng.uniform(size=(11, 11, 3))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(brute_force_ssim_11(a, b), abs=1e-10)


def test_batch_helpers():
    rng = rng_from(6)
    outs = rng.uniform(size=(3, 12, 12, 3))
    tgts = rng.uniform(size=(3, 12, 12, 3))
    assert len(batch_psnr(outs, tgts)) == 3
    assert len(batch_ssim(outs, tgts)) == 3
    assert batch_psnr(outs, outs.copy()) == [math.inf] * 3
