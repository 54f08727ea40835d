"""Full-frame generator inference with colour reproduction."""

from __future__ import annotations

import time

import numpy as np

from ..image import HdrImage, LdrImage, NormalizationMode, correct_color, luminance, normalize
from ..nn import checkpoint
from ..nn.autograd import Tensor, no_grad
from .models import MultiScaleGenerator
from .train import generator_from_state


def load_generator(path):
    """Rebuild a generator from a training checkpoint or exported generator file."""
    G = generator_from_state(checkpoint.load(path))
    return G.eval()


def _multiple(G) -> int:
    return G.cfg.size_multiple


def predict_luminance(G, x: np.ndarray) -> np.ndarray:
    """Run the generator on a normalized 2-D luminance raster of any size.

    Sides that are not a multiple of the network's stride product are padded
    by edge replication and cropped back afterwards.
    """
    h, w = x.shape
    m = _multiple(G)
    ph, pw = (-h) % m, (-w) % m
    xp = np.pad(x, ((0, ph), (0, pw)), mode="edge") if ph or pw else x
    with no_grad():
        out = G(Tensor(np.ascontiguousarray(xp, dtype=np.float32)[None, None]))
    return np.clip(out.data[0, 0, :h, :w], 0.0, 1.0).astype(np.float32)


def infer(G, hdr: HdrImage, s: float = 1.0, mode: NormalizationMode | None = None) -> LdrImage:
    x = normalize(luminance(hdr), mode)
    l_out = predict_luminance(G, x)
    if hdr.channels == 1:
        return LdrImage(l_out)
    return correct_color(hdr, l_out, s)


def time_inference(G, hdr: HdrImage, runs: int = 10, s: float = 1.0) -> tuple[LdrImage, float]:
    """Mean wall-clock seconds per call over ``runs`` calls; returns the last output too."""
    out, total = None, 0.0
    for _ in range(max(1, runs)):
        t0 = time.perf_counter()
        out = infer(G, hdr, s)
        total += time.perf_counter() - t0
    return out, total / max(1, runs)


def describe(G) -> str:
    kind = "two-scale" if isinstance(G, MultiScaleGenerator) else "single-scale"
    return f"{kind} generator, {G.num_parameters()} parameters"
