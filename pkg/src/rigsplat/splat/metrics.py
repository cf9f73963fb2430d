"""Image quality metrics on [0, 1] float images: PSNR and SSIM.

SSIM uses an 11x11 Gaussian window (sigma 1.5) kept fully inside the
image, so a half-window border is excluded from the mean. The gradient
helper returns the exact adjoint of that windowing, which the splat
optimizer consumes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigInvalid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ConfigInvalid(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; identical images give inf."""
    _check_pair(a, b)
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_kernel() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    k = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation keeping only fully-covered positions."""
    w = len(kernel)
    out = sliding_window_view(img, w, axis=0) @ kernel
    return sliding_window_view(out, w, axis=1) @ kernel


def _spread_valid(gmap: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of `_filter_valid`: scatter a valid-size map to full size."""
    w = len(kernel)
    padded = np.pad(gmap, w - 1)
    return _filter_valid(padded, kernel)


def _channels(a: np.ndarray, b: np.ndarray):
    if a.ndim == 2:
        yield a, b, None
        return
    for ch in range(a.shape[2]):
        yield a[:, :, ch], b[:, :, ch], ch


def _ssim_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray):
    """Per-pixel SSIM map plus the terms its gradient needs."""
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    var_x = _filter_valid(x * x, kernel) - mu_x ** 2
    var_y = _filter_valid(y * y, kernel) - mu_y ** 2
    cov = _filter_valid(x * y, kernel) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + c1
    b1 = mu_x ** 2 + mu_y ** 2 + c1
    a2 = 2.0 * cov + c2
    b2 = var_x + var_y + c2
    smap = (a1 * a2) / (b1 * b2)
    return smap, (mu_x, mu_y, a1, b1, a2, b2)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over pixels and channels; K1=0.01, K2=0.03."""
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ConfigInvalid(
            f"images must be at least {SSIM_WINDOW} pixels on each side"
        )
    kernel = _gaussian_kernel()
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    maps = [_ssim_channel(x, y, kernel)[0] for x, y, _ in _channels(a, b)]
    return float(np.mean(maps))


def ssim_with_gradient(a: np.ndarray, b: np.ndarray):
    """SSIM plus d(mean SSIM)/da, shaped like `a`."""
    _check_pair(a, b)
    kernel = _gaussian_kernel()
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    grad = np.zeros_like(a)
    values = []
    n_maps = 1 if a.ndim == 2 else a.shape[2]
    for x, y, ch in _channels(a, b):
        smap, (mu_x, mu_y, a1, b1, a2, b2) = _ssim_channel(x, y, kernel)
        values.append(smap.mean())
        gs = 1.0 / (smap.size * n_maps)
        # Partials of the map against local mean, variance, covariance,
        # pushed back through the (self-adjoint) window filter.
        d_mu = gs * smap * 2.0 * (mu_y / a1 - mu_x / b1)
        d_var = gs * (-smap / b2)
        d_cov = gs * (2.0 * smap / a2)
        gx = (
            _spread_valid(d_mu, kernel)
            + 2.0 * x * _spread_valid(d_var, kernel)
            - 2.0 * _spread_valid(d_var * mu_x, kernel)
            + y * _spread_valid(d_cov, kernel)
            - _spread_valid(d_cov * mu_y, kernel)
        )
        if ch is None:
            grad = gx
        else:
            grad[:, :, ch] = gx
    return float(np.mean(values)), grad
