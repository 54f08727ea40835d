"""Adam with bias correction and the constant-then-linear-decay schedule."""

from __future__ import annotations

import numpy as np


def linear_decay_lr(epoch: float, base_lr: float, warm: int, final: int) -> float:
    """Constant ``base_lr`` through epoch ``warm``, then linear decay reaching 0 at ``final``.

    Epochs are counted from 1.
    """
    if epoch <= warm or final <= warm:
        return base_lr
    return base_lr * max(0.0, (final - epoch) / (final - warm))


class Adam:
    def __init__(self, params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None or not p.requires_grad:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)

    def state(self, prefix: str) -> dict:
        out = {f"{prefix}.step": np.array([self.step_count], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m.{i}"] = m
            out[f"{prefix}.v.{i}"] = v
        return out

    def load_state(self, state: dict, prefix: str):
        self.step_count = int(state[f"{prefix}.step"][0])
        for i, p in enumerate(self.params):
            self.m[i] = np.asarray(state[f"{prefix}.m.{i}"]).astype(p.dtype).copy()
            self.v[i] = np.asarray(state[f"{prefix}.v.{i}"]).astype(p.dtype).copy()
