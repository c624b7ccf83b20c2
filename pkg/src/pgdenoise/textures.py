"""Procedural fluorescence-like test images: Gaussian blobs and filaments
over a dim, slowly varying background."""

from __future__ import annotations

import numpy as np

from .rng import RngState


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect borders."""
    radius = max(1, int(np.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img, radius, mode="reflect")
    tmp = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, pad)
    return np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, tmp)


def synthetic_texture(size: int, rng: RngState, n_blobs: int | None = None,
                      n_filaments: int | None = None, background: float = 0.03,
                      peak: float = 0.85) -> np.ndarray:
    """One ``size`` x ``size`` clean image with values in ``[background, ~peak]``."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    area = size * size / 4096.0
    if n_blobs is None:
        n_blobs = max(2, int(round(10 * area)))
    if n_filaments is None:
        n_filaments = max(1, int(round(4 * area)))

    img = np.zeros((h, w))
    params = rng.uniform(5 * n_blobs)
    for i in range(n_blobs):
        cy, cx, s, amp, ecc = params[5 * i:5 * i + 5]
        cy, cx = cy * h, cx * w
        sy = 1.5 + 5.0 * s
        sx = sy * (0.6 + 0.8 * ecc)
        img += (0.3 + 0.7 * amp) * np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))

    fil = np.zeros((h, w))
    for _ in range(n_filaments):
        p = rng.uniform(6)
        y0, x0 = p[0] * h, p[1] * w
        theta = 2 * np.pi * p[2]
        curl = (p[3] - 0.5) * 0.08
        amp = 0.3 + 0.5 * p[4]
        length = int(size * (0.6 + 0.8 * p[5]))
        y, x = y0, x0
        for _ in range(length):
            iy, ix = int(round(y)), int(round(x))
            if 0 <= iy < h and 0 <= ix < w:
                fil[iy, ix] = max(fil[iy, ix], amp)
            theta += curl
            y += np.sin(theta)
            x += np.cos(theta)
    img += 2.5 * _gaussian_blur(fil, 1.0)

    g = rng.uniform(3)
    bg = background * (1.0 + 0.5 * np.sin(2 * np.pi * (g[0] * yy / h + g[1] * xx / w) + 6.28 * g[2]))
    img = img / max(img.max(), 1e-12) * (peak - background)
    return img + bg


def texture_set(count: int, size: int, rng: RngState, **kwargs) -> list[np.ndarray]:
    return [synthetic_texture(size, rng, **kwargs) for _ in range(count)]
