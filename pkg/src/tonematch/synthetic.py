"""Seeded synthetic HDR scenes for tests, demos and smoke training."""

from __future__ import annotations

import numpy as np

from .image import HdrImage


def scene_luminance(seed: int, height: int = 64, width: int = 64, stops: float = 12.0) -> np.ndarray:
    """Positive luminance spanning roughly ``stops`` photographic stops.

    A smooth illumination gradient, a few soft blobs (lamps, windows), a hard
    edged bright rectangle and low-amplitude texture, all in log2 space.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    log2 = 0.35 * stops * (np.cos(theta) * xx + np.sin(theta) * yy)
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.05, 0.2)
        amp = rng.uniform(0.2, 0.5) * stops
        log2 += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    top, left = rng.uniform(0.1, 0.6, 2)
    box = (yy > top) & (yy < top + 0.25) & (xx > left) & (xx < left + 0.3)
    log2 += np.where(box, rng.uniform(-0.25, 0.25) * stops, 0.0)
    log2 += 0.6 * np.sin(2 * np.pi * rng.uniform(4, 9) * xx) * np.sin(2 * np.pi * rng.uniform(4, 9) * yy)
    log2 += 0.15 * rng.standard_normal((height, width))
    log2 -= log2.min()
    return np.exp2(log2 - 0.5 * stops).astype(np.float32)


def scene(seed: int, height: int = 64, width: int = 64, stops: float = 12.0, color: bool = True) -> HdrImage:
    lum = scene_luminance(seed, height, width, stops)
    if not color:
        return HdrImage(lum[:, :, None])
    rng = np.random.default_rng(seed + 7919)
    tint = rng.uniform(0.6, 1.4, 3)
    yy = np.linspace(0.0, 1.0, height)[:, None, None]
    chroma = tint * (1 - 0.3 * yy) + np.array([0.0, 0.0, 0.3]) * yy
    rgb = lum[:, :, None] * chroma
    # rescale so the Rec.709 luminance of the colour image equals ``lum``
    y = rgb @ np.array([0.2126, 0.7152, 0.0722])
    rgb *= (lum / np.maximum(y, 1e-12))[:, :, None]
    return HdrImage(rgb.astype(np.float32))
