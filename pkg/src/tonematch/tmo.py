"""Classical tone-mapping operators behind one dispatcher.

Every operator takes a strictly positive single-channel luminance raster and
returns values in [0, 1]. Zeros are lifted to ``LUM_GUARD`` before dispatch so
log/division singularities are handled in one place.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .image import HdrImage, LdrImage, correct_color, luminance

LUM_GUARD = 1e-9


class TmoError(ValueError):
    pass


class NonPositiveLuminanceError(TmoError):
    pass


class UnknownOperatorError(TmoError):
    pass


class SolverDivergedError(ArithmeticError):
    """Raised when the Poisson solver misses its tolerance within budget."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(f"Poisson solver stopped after {iterations} iterations, residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations


class TmoId(str, Enum):
    GAMMA = "gamma"
    LOG = "log"
    WARD = "ward"
    TUMBLIN = "tumblin"
    SCHLICK = "schlick"
    DRAGO = "drago"
    REINHARD = "reinhard"
    DURAND = "durand"
    FATTAL = "fattal"

    @classmethod
    def parse(cls, name) -> "TmoId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise UnknownOperatorError(f"unknown operator {name!r}; valid: {valid}") from None


# Frozen defaults; ``tonematch describe --ops`` prints this table.
DEFAULTS: dict[TmoId, dict[str, float]] = {
    TmoId.GAMMA: {"gamma": 2.2},
    TmoId.LOG: {"k": 1.0},
    TmoId.WARD: {"ld_max": 100.0},
    TmoId.TUMBLIN: {"l_da": 30.0, "ld_max": 100.0, "c_max": 100.0},
    TmoId.SCHLICK: {"p": 200.0},
    TmoId.DRAGO: {"bias": 0.85, "ld_max": 100.0},
    TmoId.REINHARD: {"key": 0.18, "delta": 1e-6, "l_white": 0.0},
    TmoId.DURAND: {"sigma_s_frac": 0.02, "sigma_r": 0.4, "contrast": 50.0},
    TmoId.FATTAL: {"alpha_frac": 0.1, "beta": 0.85, "levels": 4.0, "tol": 1e-4, "max_iters": 10000.0},
}

GLOBAL_OPERATORS = (TmoId.GAMMA, TmoId.LOG, TmoId.WARD, TmoId.SCHLICK, TmoId.DRAGO, TmoId.REINHARD)


def resolve_params(tmo: TmoId, params: dict | None) -> dict[str, float]:
    out = dict(DEFAULTS[tmo])
    for key, value in (params or {}).items():
        if key not in out:
            raise TmoError(f"{tmo.value}: unknown parameter {key!r} (known: {', '.join(out)})")
        value = float(value)
        if not math.isfinite(value):
            raise TmoError(f"{tmo.value}: parameter {key} must be finite")
        out[key] = value
    return out


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def _log_mean(lum: np.ndarray, delta: float = 1e-6) -> float:
    return float(np.exp(np.mean(np.log(lum + delta))))


# --------------------------------------------------------------------------
# global operators


def gamma_tmo(lum, gamma=2.2):
    return _minmax(lum) ** (1.0 / gamma)


def log_tmo(lum, k=1.0):
    return np.log1p(k * lum) / np.log1p(k * lum.max())


def ward_tmo(lum, ld_max=100.0):
    l_wa = _log_mean(lum)
    m = ((1.219 + (ld_max / 2.0) ** 0.4) / (1.219 + l_wa ** 0.4)) ** 2.5
    out = m * lum / ld_max
    # rescale (never shift) so the brightest pixel fits the display
    return out / max(1.0, out.max())


def _stevens_gamma(l):
    l = np.asarray(l, dtype=np.float64)
    return np.where(l > 100.0, 2.655, 1.855 + 0.4 * np.log10(l + 2.3e-5))


def tumblin_tmo(lum, l_da=30.0, ld_max=100.0, c_max=100.0):
    l_wa = _log_mean(lum)
    gamma_w = float(_stevens_gamma(l_wa))
    gamma_d = float(_stevens_gamma(l_da))
    gamma_wd = gamma_w / (1.855 + 0.4 * math.log10(l_da))
    m = math.sqrt(c_max) ** (gamma_wd - 1.0)
    out = l_da * m * (lum / l_wa) ** (gamma_w / gamma_d) / ld_max
    return out / max(1.0, out.max())


def schlick_tmo(lum, p=200.0):
    l_max = lum.max()
    return p * lum / (p * lum - lum + l_max)


def drago_tmo(lum, bias=0.85, ld_max=100.0):
    l_wa = _log_mean(lum) / (1.0 + bias - 0.85) ** 5
    lw = lum / l_wa
    lw_max = lw.max()
    c = math.log(bias) / math.log(0.5)
    scale = (ld_max / 100.0) / math.log10(1.0 + lw_max)
    return scale * np.log1p(lw) / np.log(2.0 + 8.0 * (lw / lw_max) ** c)


def reinhard_tmo(lum, key=0.18, delta=1e-6, l_white=0.0):
    l_bar = _log_mean(lum, delta)
    ls = key * lum / l_bar
    lw = l_white if l_white > 0 else ls.max()
    return ls * (1.0 + ls / lw ** 2) / (1.0 + ls)


# --------------------------------------------------------------------------
# Durand: bilateral base/detail split in log10 space


def bilateral_filter(img: np.ndarray, sigma_s: float, sigma_r: float) -> np.ndarray:
    """Exact bilateral filter with a 3*sigma_s square support.

    Neighbours outside the raster are dropped and the weights renormalized.
    ``sigma_r = inf`` yields a truncated, renormalized Gaussian blur.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    r = max(1, int(math.ceil(3.0 * sigma_s)))
    num = np.zeros_like(img)
    den = np.zeros_like(img)
    padded = np.pad(img, r, mode="constant", constant_values=np.nan)
    inv_s = -0.5 / sigma_s ** 2
    inv_r = 0.0 if math.isinf(sigma_r) else -0.5 / sigma_r ** 2
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ws = math.exp((dy * dy + dx * dx) * inv_s)
            nb = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            valid = ~np.isnan(nb)
            nb = np.where(valid, nb, 0.0)
            wgt = ws * np.exp(inv_r * (nb - img) ** 2) * valid
            num += wgt * nb
            den += wgt
    return num / den


def durand_tmo(lum, sigma_s_frac=0.02, sigma_r=0.4, contrast=50.0):
    log_l = np.log10(lum)
    h, w = lum.shape
    sigma_s = max(sigma_s_frac * math.hypot(h, w), 0.5)
    base = bilateral_filter(log_l, sigma_s, sigma_r)
    detail = log_l - base
    span = base.max() - base.min()
    c = math.log10(contrast) / span if span > 0 else 1.0
    out = 10.0 ** ((base - base.max()) * c + detail)
    return _minmax(out)


# --------------------------------------------------------------------------
# Fattal: gradient-domain attenuation + Poisson reconstruction


def laplacian_neumann(u: np.ndarray) -> np.ndarray:
    """5-point Laplacian with reflecting (zero-flux) borders."""
    p = np.pad(np.asarray(u, dtype=np.float64), 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * p[1:-1, 1:-1]


def _solve_dct(div: np.ndarray) -> np.ndarray:
    h, w = div.shape
    coef = sfft.dctn(div, type=2, norm="ortho")
    ky = 2.0 * np.cos(np.pi * np.arange(h) / h) - 2.0
    kx = 2.0 * np.cos(np.pi * np.arange(w) / w) - 2.0
    denom = ky[:, None] + kx[None, :]
    denom[0, 0] = 1.0
    coef = coef / denom
    coef[0, 0] = 0.0
    return sfft.idctn(coef, type=2, norm="ortho")


def _solve_jacobi(div: np.ndarray, tol: float, max_iters: int, omega: float = 0.8):
    h, w = div.shape
    # neighbour count per cell under zero-flux borders
    deg = np.full((h, w), 4.0)
    deg[0, :] -= 1
    deg[-1, :] -= 1
    deg[:, 0] -= 1
    deg[:, -1] -= 1
    u = np.zeros_like(div)
    for it in range(1, max_iters + 1):
        p = np.pad(u, 1, mode="edge")
        nb = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - (4.0 - deg) * u
        u = (1.0 - omega) * u + omega * (nb - div) / deg
        if it % 25 == 0 or it == max_iters:
            u -= u.mean()
            res = np.abs(laplacian_neumann(u) - div).max()
            if res <= tol:
                return u, res, it
    return u, res, max_iters


def solve_poisson(divergence, tol: float = 1e-4, max_iters: int = 10000, method: str = "dct") -> np.ndarray:
    """Solve lap(I) = div under zero-flux borders, returning the zero-mean solution.

    The mean of ``divergence`` is projected out first (the Neumann problem is
    only solvable for zero-mean data); the residual is measured against the
    projected right-hand side. ``method`` is ``"dct"`` (direct, via cosine
    transform) or ``"jacobi"`` (damped Jacobi).
    """
    div = np.asarray(divergence, dtype=np.float64)
    if not np.all(np.isfinite(div)):
        raise TmoError("divergence contains non-finite values")
    div = div - div.mean()
    if method == "dct":
        u = _solve_dct(div)
        u -= u.mean()
        res = float(np.abs(laplacian_neumann(u) - div).max())
        iters = 1
    elif method == "jacobi":
        u, res, iters = _solve_jacobi(div, tol, int(max_iters))
    else:
        raise ValueError(f"unknown Poisson method {method!r}")
    if not res <= tol:
        raise SolverDivergedError(float(res), iters)
    return u


def _gradient_magnitude(h: np.ndarray, level: int) -> np.ndarray:
    p = np.pad(h, 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0 ** (level + 1)
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0 ** (level + 1)
    return np.hypot(gx, gy)


def attenuation_map(log_l: np.ndarray, alpha_frac=0.1, beta=0.85, levels=4) -> np.ndarray:
    """Multi-scale gradient attenuation factors, combined coarse to fine."""
    pyramid = [log_l]
    for _ in range(int(levels) - 1):
        nxt = ndimage.gaussian_filter(pyramid[-1], 1.0, mode="nearest")[::2, ::2]
        if min(nxt.shape) < 2:
            break
        pyramid.append(nxt)
    phi = None
    for k in range(len(pyramid) - 1, -1, -1):
        mag = _gradient_magnitude(pyramid[k], k)
        alpha = max(alpha_frac * mag.mean(), 1e-8)
        mag = np.maximum(mag, 1e-4 * alpha)
        local = (alpha / mag) * (mag / alpha) ** beta
        if phi is None:
            phi = local
        else:
            up = np.repeat(np.repeat(phi, 2, axis=0), 2, axis=1)
            up = np.pad(up, ((0, max(0, local.shape[0] - up.shape[0])), (0, max(0, local.shape[1] - up.shape[1]))),
                        mode="edge")[:local.shape[0], :local.shape[1]]
            phi = up * local
    return phi


def fattal_tmo(lum, alpha_frac=0.1, beta=0.85, levels=4, tol=1e-4, max_iters=10000):
    log_l = np.log(lum)
    phi = attenuation_map(log_l, alpha_frac, beta, levels)
    gx = np.zeros_like(log_l)
    gy = np.zeros_like(log_l)
    gx[:, :-1] = log_l[:, 1:] - log_l[:, :-1]
    gy[:-1, :] = log_l[1:, :] - log_l[:-1, :]
    gx *= phi
    gy *= phi
    div = gx.copy()
    div[:, 1:] -= gx[:, :-1]
    div += gy
    div[1:, :] -= gy[:-1, :]
    recon = solve_poisson(div, tol=tol, max_iters=int(max_iters))
    return _minmax(np.exp(recon - recon.max()))


# --------------------------------------------------------------------------
# dispatch

_FUNCS = {
    TmoId.GAMMA: gamma_tmo,
    TmoId.LOG: log_tmo,
    TmoId.WARD: ward_tmo,
    TmoId.TUMBLIN: tumblin_tmo,
    TmoId.SCHLICK: schlick_tmo,
    TmoId.DRAGO: drago_tmo,
    TmoId.REINHARD: reinhard_tmo,
    TmoId.DURAND: durand_tmo,
    TmoId.FATTAL: fattal_tmo,
}


def guard_luminance(lum) -> np.ndarray:
    lum = np.asarray(lum, dtype=np.float64)
    if lum.ndim == 3 and lum.shape[2] == 1:
        lum = lum[:, :, 0]
    if lum.ndim != 2:
        raise TmoError(f"expected single-channel luminance, got shape {lum.shape}")
    if not np.all(np.isfinite(lum)):
        raise NonPositiveLuminanceError("luminance contains non-finite samples")
    if np.any(lum < 0):
        raise NonPositiveLuminanceError("luminance contains negative samples")
    return np.where(lum > 0, lum, LUM_GUARD)


def apply_tmo(tmo, params: dict | None, hdr_lum) -> np.ndarray:
    """Tone-map a luminance raster with one operator; returns float32 in [0, 1]."""
    tmo = TmoId.parse(tmo)
    p = resolve_params(tmo, params)
    lum = guard_luminance(hdr_lum)
    out = _FUNCS[tmo](lum, **p)
    if not np.all(np.isfinite(out)):
        raise ArithmeticError(f"{tmo.value} produced non-finite output")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_tmo_color(tmo, params: dict | None, hdr: HdrImage, s: float = 1.0) -> LdrImage:
    out = apply_tmo(tmo, params, luminance(hdr))
    if hdr.channels == 1:
        return LdrImage(out)
    return correct_color(hdr, out, s)


def describe_table() -> list[tuple[str, str, float]]:
    return [(t.value, k, v) for t in TmoId for k, v in DEFAULTS[t].items()]
