"""Least-squares adversarial, feature-matching and perceptual losses."""

from __future__ import annotations

from dataclasses import dataclass

from ..nn import autograd as T
from ..nn.autograd import ShapeError, Tensor


@dataclass(frozen=True)
class LossWeights:
    fm: float = 10.0
    perceptual: float = 10.0

    def __post_init__(self):
        if self.fm < 0 or self.perceptual < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


def lsgan_loss(logits: Tensor, real: bool) -> Tensor:
    """Mean squared distance of the logits from 1 (real) or 0 (fake)."""
    return T.mse(logits, 1.0 if real else 0.0)


def adversarial_loss(outputs, real: bool) -> Tensor:
    """``lsgan_loss`` on the logit map of every discriminator scale, summed."""
    total = None
    for feats in outputs:
        term = lsgan_loss(feats[-1], real)
        total = term if total is None else total + term
    return total


def fm_loss(real_feats, fake_feats) -> Tensor:
    """Sum over layers of the element-count normalized L1 distance.

    Real features are treated as constants.
    """
    if len(real_feats) != len(fake_feats):
        raise ShapeError(f"feature-matching needs equal layer counts, got {len(real_feats)} and {len(fake_feats)}")
    total = None
    for r, f in zip(real_feats, fake_feats):
        if r.shape != f.shape:
            raise ShapeError(f"feature shapes differ: {r.shape} vs {f.shape}")
        term = T.l1(f, r.detach())
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def multiscale_fm_loss(real_outputs, fake_outputs) -> Tensor:
    """``fm_loss`` over the intermediate (non-logit) features of every scale."""
    if len(real_outputs) != len(fake_outputs):
        raise ShapeError("discriminator scale counts differ")
    total = None
    for r, f in zip(real_outputs, fake_outputs):
        term = fm_loss(r[:-1], f[:-1])
        total = term if total is None else total + term
    return total


def perceptual_loss(y: Tensor, g_x: Tensor, net) -> Tensor:
    """Sum over the net's taps of the element-count normalized L1 feature distance."""
    if y.shape != g_x.shape:
        raise ShapeError(f"perceptual loss needs equal shapes, got {y.shape} and {g_x.shape}")
    total = None
    for fy, fg in zip(net(y), net(g_x)):
        term = T.l1(fg, fy)
        total = term if total is None else total + term
    return total
