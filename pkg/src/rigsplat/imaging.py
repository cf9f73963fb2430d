"""Image-domain operations: sampling, sharpness, filtering, correlation, io.

Images are float arrays in [0, 1], grayscale (H, W) or color (H, W, 3).
Integer pixel coordinates address pixel centers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateSpectrum, EmptyImage, IoFailure


def _check_image(image: np.ndarray):
    if image.ndim not in (2, 3) or min(image.shape[:2]) == 0:
        raise EmptyImage(f"bad image shape {image.shape}")


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray, fill: float = 0.0):
    """Sample `image` at fractional pixel positions, `fill` outside the frame."""
    _check_image(image)
    image = np.asarray(image, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h, w = image.shape[:2]
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
        valid_w = valid[..., None]
    else:
        valid_w = valid
    out = (
        image[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + image[y0, x1] * fx * (1.0 - fy)
        + image[y1, x0] * (1.0 - fx) * fy
        + image[y1, x1] * fx * fy
    )
    return np.where(valid_w, out, fill)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma conversion for color images, pass-through for grayscale."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img


def laplacian_filter(image: np.ndarray) -> np.ndarray:
    """4-neighbor Laplacian response with replicated borders."""
    _check_image(image)
    img = to_gray(image)
    padded = np.pad(img, 1, mode="edge")
    return (
        padded[:-2, 1:-1]
        + padded[2:, 1:-1]
        + padded[1:-1, :-2]
        + padded[1:-1, 2:]
        - 4.0 * img
    )


def laplacian_variance(image: np.ndarray) -> float:
    """Variance of the 4-neighbor Laplacian response, replicated borders."""
    return float(laplacian_filter(image).var())


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated borders.

    The kernel is sampled at integer offsets out to ceil(3 sigma) and
    normalized to unit sum, so flat regions pass through unchanged.
    """
    _check_image(image)
    img = np.asarray(image, dtype=float)
    if sigma <= 0.0:
        return img.copy()
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    out = ndimage.convolve1d(img, kernel, axis=0, mode="nearest")
    return ndimage.convolve1d(out, kernel, axis=1, mode="nearest")


def clahe(image: np.ndarray, tiles: int = 8, clip_limit: float = 2.0) -> np.ndarray:
    """Contrast limited adaptive histogram equalization on a grayscale image.

    Args:
        image: grayscale float image in [0, 1].
        tiles: tile count per axis.
        clip_limit: histogram clip threshold as a multiple of the mean
            bin count; excess mass is spread uniformly over all bins.

    Returns:
        Equalized image in [0, 1], blended bilinearly between the
        per-tile mappings.  Tiles with no intensity range keep the
        identity mapping, so constant images are returned unchanged.
    """
    _check_image(image)
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise EmptyImage("adaptive equalization expects a grayscale image")
    h, w = img.shape
    ty = int(min(tiles, h))
    tx = int(min(tiles, w))
    g = np.clip(np.rint(img * 255.0), 0, 255).astype(np.int64)

    y_edges = (np.arange(ty + 1) * h) // ty
    x_edges = (np.arange(tx + 1) * w) // tx
    maps = np.empty((ty, tx, 256))
    identity = np.arange(256, dtype=float)
    for i in range(ty):
        for j in range(tx):
            sub = g[y_edges[i] : y_edges[i + 1], x_edges[j] : x_edges[j + 1]]
            if sub.min() == sub.max():
                maps[i, j] = identity
                continue
            hist = np.bincount(sub.ravel(), minlength=256).astype(float)
            clip = clip_limit * sub.size / 256.0
            excess = np.sum(np.maximum(hist - clip, 0.0))
            hist = np.minimum(hist, clip) + excess / 256.0
            cdf = np.cumsum(hist)
            cdf_min = cdf[np.flatnonzero(hist)[0]]
            denom = cdf[-1] - cdf_min
            if denom <= 0.0:
                maps[i, j] = identity
                continue
            maps[i, j] = np.rint((cdf - cdf_min) / denom * 255.0)

    def _blend_axis(coords, edges, count):
        centers = (edges[:-1] + edges[1:] - 1) / 2.0
        if count == 1:
            lo = np.zeros(len(coords), dtype=int)
            return lo, lo, np.zeros(len(coords))
        lo = np.clip(np.searchsorted(centers, coords) - 1, 0, count - 2)
        frac = (coords - centers[lo]) / (centers[lo + 1] - centers[lo])
        return lo, lo + 1, np.clip(frac, 0.0, 1.0)

    i0, i1, wy = _blend_axis(np.arange(h, dtype=float), y_edges, ty)
    j0, j1, wx = _blend_axis(np.arange(w, dtype=float), x_edges, tx)
    i0, i1, wy = i0[:, None], i1[:, None], wy[:, None]
    j0, j1, wx = j0[None, :], j1[None, :], wx[None, :]
    out = (
        maps[i0, j0, g] * (1.0 - wy) * (1.0 - wx)
        + maps[i0, j1, g] * (1.0 - wy) * wx
        + maps[i1, j0, g] * wy * (1.0 - wx)
        + maps[i1, j1, g] * wy * wx
    )
    # Output stays on the 8 bit grid, like the frame format it feeds.
    return np.clip(np.rint(out), 0.0, 255.0) / 255.0


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def phase_correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Translation (dy, dx) of `b` relative to `a` by phase correlation.

    Both images are Hann windowed and zero padded to power-of-two sizes
    before the spectra are compared, and the correlation peak is refined
    to subpixel precision with a three point parabolic fit per axis.

    Raises:
        DegenerateSpectrum: if either input has no intensity variation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_image(a)
    _check_image(b)
    if a.shape != b.shape or a.ndim != 2:
        raise EmptyImage(f"expected matching grayscale images, got {a.shape} and {b.shape}")
    if a.std() == 0.0 or b.std() == 0.0:
        raise DegenerateSpectrum("constant image has no correlation peak")
    h, w = a.shape
    window = np.outer(np.hanning(h), np.hanning(w))
    ph, pw = _next_pow2(h), _next_pow2(w)
    fa = np.fft.fft2(a * window, s=(ph, pw))
    fb = np.fft.fft2(b * window, s=(ph, pw))
    cross = np.conj(fa) * fb
    mag = np.abs(cross)
    peak_mag = mag.max()
    if peak_mag == 0.0:
        raise DegenerateSpectrum("cross spectrum vanished after windowing")
    corr = np.real(np.fft.ifft2(cross / np.maximum(mag, 1e-15 * peak_mag)))

    peak = np.unravel_index(np.argmax(corr), corr.shape)
    out = np.empty(2)
    for axis, (idx, size) in enumerate(zip(peak, (ph, pw))):
        if axis == 0:
            prev, here, nxt = corr[(idx - 1) % size, peak[1]], corr[idx, peak[1]], corr[(idx + 1) % size, peak[1]]
        else:
            prev, here, nxt = corr[peak[0], (idx - 1) % size], corr[peak[0], idx], corr[peak[0], (idx + 1) % size]
        denom = prev - 2.0 * here + nxt
        delta = 0.0 if abs(denom) < 1e-15 else np.clip(0.5 * (prev - nxt) / denom, -0.5, 0.5)
        signed = idx if idx <= size // 2 else idx - size
        out[axis] = signed + delta
    return out


def phase_correlate_vertical(a: np.ndarray, b: np.ndarray) -> float:
    """Vertical displacement of `b` relative to `a`; the horizontal
    component of the correlation peak is computed but discarded."""
    return float(phase_correlate(a, b)[0])


# -- image files --------------------------------------------------------------


def save_image(path, image: np.ndarray):
    """Write a float image in [0, 1] as binary PGM (gray) or PPM (color)."""
    _check_image(image)
    img = np.asarray(image, dtype=float)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    if img.ndim == 2:
        header = f"P5\n{w} {h}\n255\n"
    elif img.shape[2] == 3:
        header = f"P6\n{w} {h}\n255\n"
    else:
        raise IoFailure(f"cannot encode image with shape {img.shape}")
    Path(path).write_bytes(header.encode("ascii") + data.tobytes())


def load_image(path) -> np.ndarray:
    """Read a binary PGM or PPM file into a float array in [0, 1]."""
    raw = Path(path).read_bytes()
    pos = 0

    def _token():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IoFailure(f"truncated image header in {path}")
        return raw[start:pos]

    magic = _token()
    if magic not in (b"P5", b"P6"):
        raise IoFailure(f"unsupported image format {magic!r} in {path}")
    w, h, maxval = int(_token()), int(_token()), int(_token())
    if maxval != 255:
        raise IoFailure(f"expected 8 bit data, got maxval {maxval}")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    expect = w * h * channels
    if len(raw) - pos < expect:
        raise IoFailure(f"image data truncated in {path}")
    data = np.frombuffer(raw, dtype=np.uint8, count=expect, offset=pos)
    img = data.astype(float) / 255.0
    if channels == 1:
        return img.reshape(h, w)
    return img.reshape(h, w, 3)
