"""Raster types, luminance extraction, input normalization and color handling.

Rasters are stored as ``(height, width, channels)`` float32 arrays. A
single-channel raster may also be passed around as a bare 2-D array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REC709 = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)
LUMA_GUARD = 1e-9
LOG_EPSILON = 1e-6


class ImageError(ValueError):
    """Raised when a raster violates its type invariants."""


def _as_hwc(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageError(f"expected (H, W) or (H, W, 1|3) raster, got shape {arr.shape}")
    return arr


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask.reshape(-1))[0])


@dataclass(frozen=True, eq=False)
class HdrImage:
    """Linear scene radiance in relative units; finite and non-negative."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_hwc(self.data)
        if not np.all(np.isfinite(arr)):
            raise ImageError(f"non-finite HDR sample at flat index {_first_bad(~np.isfinite(arr))}")
        if np.any(arr < 0):
            raise ImageError(f"negative HDR sample at flat index {_first_bad(arr < 0)}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class LdrImage:
    """Display-referred raster with every sample in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_hwc(self.data)
        bad = ~np.isfinite(arr) | (arr < 0) | (arr > 1)
        if np.any(bad):
            raise ImageError(f"LDR sample outside [0, 1] at flat index {_first_bad(bad)}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class NormalizationMode:
    variant: str = "linear"
    epsilon: float = LOG_EPSILON

    def __post_init__(self):
        if self.variant not in ("linear", "log"):
            raise ValueError(f"unknown normalization variant {self.variant!r}")
        if not self.epsilon > 0:
            raise ValueError("log epsilon must be positive")


def _raw(img) -> np.ndarray:
    if isinstance(img, (HdrImage, LdrImage)):
        return img.data
    return _as_hwc(img)


def luminance(img) -> np.ndarray:
    """Return the (H, W) luminance of a 1- or 3-channel raster (Rec.709 weights)."""
    arr = _raw(img)
    finite = np.isfinite(arr)
    if not finite.all():
        raise ImageError(f"non-finite sample at flat index {_first_bad(~finite)}")
    if arr.shape[2] == 1:
        return arr[:, :, 0].copy()
    lum = arr.astype(np.float64) @ REC709
    return np.maximum(lum, 0.0).astype(np.float32)


def normalize(lum, mode: NormalizationMode | None = None) -> np.ndarray:
    """Min-max scale a luminance raster into [0, 1], optionally after ln(x + eps).

    A flat raster carries no tonal information and maps to all zeros.
    """
    mode = mode or NormalizationMode()
    x = np.asarray(lum, dtype=np.float64)
    if mode.variant == "log":
        x = np.log(x + mode.epsilon)
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.float32)
    out = (x - lo) / (hi - lo)
    return out.astype(np.float32)


def _check_pair(hdr: HdrImage, l_out) -> tuple[np.ndarray, np.ndarray]:
    arr = _raw(hdr)
    if arr.shape[2] != 3:
        raise ImageError("color reproduction needs a 3-channel HDR image")
    lo = np.asarray(l_out, dtype=np.float64)
    if lo.ndim == 3 and lo.shape[2] == 1:
        lo = lo[:, :, 0]
    if lo.shape != arr.shape[:2]:
        raise ImageError(f"luminance shape {lo.shape} does not match image {arr.shape[:2]}")
    return arr.astype(np.float64), lo


def correct_color(hdr: HdrImage, l_out, s: float = 1.0) -> LdrImage:
    """C_out = ((C_in / L_in - 1) * s + 1) * L_out, clamped to [0, 1].

    Pixels whose input luminance falls below ``LUMA_GUARD`` come out gray.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"saturation must lie in [0, 1], got {s}")
    c_in, lo = _check_pair(hdr, l_out)
    l_in = luminance(hdr).astype(np.float64)
    dark = l_in < LUMA_GUARD
    ratio = c_in / np.where(dark, 1.0, l_in)[:, :, None]
    ratio[dark] = 1.0
    if s != 1.0:
        ratio = (ratio - 1.0) * s + 1.0
    out = ratio * lo[:, :, None]
    return LdrImage(np.clip(out, 0.0, 1.0).astype(np.float32))


def reproduce_color(hdr: HdrImage, l_out) -> LdrImage:
    """Classical ratio color reproduction C_out = (C_in / L_in) * L_out."""
    return correct_color(hdr, l_out, 1.0)
