"""Tone-Mapped image Quality Index.

Structural fidelity compares local statistics of the HDR and tone-mapped
luminance over five dyadic scales; naturalness scores the tone-mapped image
against Gaussian (brightness) and Beta (contrast) models of natural images.
Both sides are compared on a 0-255 scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import ndtr
from scipy.stats import beta as beta_dist
from scipy.stats import norm


_PUBLISHED_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
# the published weights sum to 1.0001; renormalize so the geometric mean is exact
_SCALE_WEIGHTS = tuple(w / sum(_PUBLISHED_WEIGHTS) for w in _PUBLISHED_WEIGHTS)


@dataclass(frozen=True)
class TmqiConstants:
    a: float = 0.8012
    alpha: float = 0.3046
    beta: float = 0.7088
    scale_weights: tuple = _SCALE_WEIGHTS
    window_size: int = 11
    window_sigma: float = 1.5
    c1: float = 0.01
    c2: float = 10.0
    # contrast-sensitivity model: peak spatial frequency at the finest scale
    base_frequency: float = 32.0
    mean_mu: float = 115.94
    mean_sigma: float = 27.99
    contrast_p: float = 4.4
    contrast_q: float = 10.1
    contrast_norm: float = 64.29
    block: int = 11
    # "linear": HDR luminance min-max mapped to 0-255; "log": ln(L + log_epsilon) min-max mapped
    hdr_scaling: str = "linear"
    log_epsilon: float = 1e-6

    def __post_init__(self):
        if self.hdr_scaling not in ("linear", "log"):
            raise ValueError(f"hdr_scaling must be 'linear' or 'log', got {self.hdr_scaling!r}")
        w = np.asarray(self.scale_weights, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w <= 0):
            raise ValueError("scale weights must be positive and sum to 1")
        if min(self.a, self.alpha, self.beta) <= 0 or self.a >= 1:
            raise ValueError("combination constants out of range")

    @property
    def levels(self) -> int:
        return len(self.scale_weights)


DEFAULT_CONSTANTS = TmqiConstants()
MIN_SIDE = 32


@dataclass
class TmqiReport:
    structural: float
    naturalness: float
    score: float
    per_scale_fidelity: list = field(default_factory=list)

    def csv_row(self, scene: str, operator: str) -> list:
        return [scene, operator, f"{self.structural:.10f}", f"{self.naturalness:.10f}", f"{self.score:.10f}",
                *(f"{v:.10f}" for v in self.per_scale_fidelity)]


CSV_HEADER = ["scene", "operator", "S", "N", "Q", "S1", "S2", "S3", "S4", "S5"]


def _window(c: TmqiConstants) -> np.ndarray:
    r = c.window_size // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / c.window_sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def csf_threshold(frequency: float) -> float:
    """Visibility threshold of local deviation (0-255 scale) at a spatial frequency."""
    f = 0.114 * frequency
    csf = 100.0 * 2.6 * (0.0192 + f) * math.exp(-(f ** 1.1))
    return 128.0 / (1.4 * csf)


def _local_fidelity(x: np.ndarray, y: np.ndarray, frequency: float, c: TmqiConstants) -> np.ndarray:
    win = _window(c)

    def filt(a):
        return ndimage.correlate(a, win, mode="reflect")

    mu_x, mu_y = filt(x), filt(y)
    var_x = np.maximum(filt(x * x) - mu_x * mu_x, 0.0)
    var_y = np.maximum(filt(y * y) - mu_y * mu_y, 0.0)
    cov = filt(x * y) - mu_x * mu_y
    sd_x, sd_y = np.sqrt(var_x), np.sqrt(var_y)
    tau = csf_threshold(frequency)
    # perceived deviation: Gaussian-CDF of the raw deviation around the threshold
    sx = ndtr((sd_x - tau) / (tau / 3.0))
    sy = ndtr((sd_y - tau) / (tau / 3.0))
    signal = (2.0 * sx * sy + c.c1) / (sx * sx + sy * sy + c.c1)
    structure = (cov + c.c2) / (sd_x * sd_y + c.c2)
    return signal * structure


def _halve(a: np.ndarray) -> np.ndarray:
    # 2x2 box average then decimate; odd edges are replicated
    a = np.pad(a, ((0, a.shape[0] % 2), (0, a.shape[1] % 2)), mode="edge")
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def _check(hdr_lum, ldr_lum):
    x = np.asarray(hdr_lum, dtype=np.float64)
    y = np.asarray(ldr_lum, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if y.ndim == 3 and y.shape[2] == 1:
        y = y[:, :, 0]
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError(f"HDR {x.shape} and LDR {y.shape} luminance must have equal 2-D shapes")
    if min(x.shape) < MIN_SIDE:
        raise ValueError(f"images must be at least {MIN_SIDE} px on each side, got {x.shape}")
    return x, y


def scale_hdr(hdr_lum: np.ndarray, constants: TmqiConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Min-max map of HDR luminance (or its logarithm) onto 0-255."""
    if constants.hdr_scaling == "log":
        hdr_lum = np.log(np.maximum(hdr_lum, 0.0) + constants.log_epsilon)
    lo, hi = hdr_lum.min(), hdr_lum.max()
    if hi <= lo:
        return np.zeros_like(hdr_lum)
    return 255.0 * (hdr_lum - lo) / (hi - lo)


def structural_fidelity(hdr_lum, ldr_lum, constants: TmqiConstants = DEFAULT_CONSTANTS):
    x, y = _check(hdr_lum, ldr_lum)
    x = scale_hdr(x, constants)
    y = 255.0 * y
    per_scale = []
    freq = constants.base_frequency
    for level in range(constants.levels):
        per_scale.append(float(_local_fidelity(x, y, freq, constants).mean()))
        if level + 1 < constants.levels:
            x, y = _halve(x), _halve(y)
            freq /= 2.0
    return combine_scales(per_scale, constants), per_scale


def combine_scales(per_scale, constants: TmqiConstants = DEFAULT_CONSTANTS) -> float:
    s = 1.0
    for value, weight in zip(per_scale, constants.scale_weights):
        s *= max(value, 0.0) ** weight
    return float(s)


def block_deviation(ldr255: np.ndarray, block: int) -> float:
    h, w = ldr255.shape
    # values are shifted by one sample of their block first so constant blocks give exactly 0
    if h < block or w < block:
        return float((ldr255 - ldr255.flat[0]).std(ddof=1)) if ldr255.size > 1 else 0.0
    bh, bw = h // block, w // block
    tiles = ldr255[:bh * block, :bw * block].reshape(bh, block, bw, block)
    tiles = tiles - tiles[:, :1, :, :1]
    return float(tiles.std(axis=(1, 3), ddof=1).mean())


def naturalness_peak(constants: TmqiConstants = DEFAULT_CONSTANTS) -> float:
    """Largest attainable brightness-pdf times contrast-pdf product."""
    p, q = constants.contrast_p, constants.contrast_q
    mode = (p - 1.0) / (p + q - 2.0)
    return float(norm.pdf(constants.mean_mu, constants.mean_mu, constants.mean_sigma) * beta_dist.pdf(mode, p, q))


def naturalness(ldr_lum, constants: TmqiConstants = DEFAULT_CONSTANTS) -> float:
    y = 255.0 * np.asarray(ldr_lum, dtype=np.float64)
    if y.ndim == 3:
        y = y[:, :, 0]
    m = float(y.mean())
    d = block_deviation(y, constants.block)
    pm = norm.pdf(m, constants.mean_mu, constants.mean_sigma)
    pd = beta_dist.pdf(d / constants.contrast_norm, constants.contrast_p, constants.contrast_q)
    return float(min(1.0, pm * pd / naturalness_peak(constants)))


def combine(s: float, n: float, constants: TmqiConstants = DEFAULT_CONSTANTS) -> float:
    c = constants
    return float(c.a * s ** c.alpha + (1.0 - c.a) * n ** c.beta)


def tmqi(hdr_lum, ldr_lum, constants: TmqiConstants = DEFAULT_CONSTANTS) -> TmqiReport:
    s, per_scale = structural_fidelity(hdr_lum, ldr_lum, constants)
    n = naturalness(ldr_lum, constants)
    return TmqiReport(s, n, combine(s, n, constants), per_scale)
