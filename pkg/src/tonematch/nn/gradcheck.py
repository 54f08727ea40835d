"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    checked: int
    tol: float
    worst: str = ""
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(analytic, numeric, floor: float = 1e-12):
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(fn, tensors, eps: float = 1e-3, tol: float = 1e-3, names=None, seed: int = 1234,
               max_params: int = 10_000, rel_floor: float = 1e-3) -> GradCheckReport:
    """Compare backprop gradients of ``fn()`` against central differences.

    ``fn`` re-runs the forward pass and returns a Tensor; non-scalar outputs
    are reduced with a fixed random projection. Every element of each tensor
    in ``tensors`` is perturbed, so run it in float64 for meaningful results.
    Relative errors use ``max(|analytic|, |numeric|)`` as denominator, floored
    at ``rel_floor`` times the largest numeric gradient of the same tensor.
    """
    tensors = list(tensors)
    names = names or [f"t{i}" for i in range(len(tensors))]
    total = sum(t.data.size for t in tensors)
    if total > max_params:
        raise ValueError(f"fragment has {total} parameters; grad_check is limited to {max_params}")
    probe = None

    def scalar():
        nonlocal probe
        out = fn()
        if out.data.size == 1:
            return out
        if probe is None:
            probe = np.random.default_rng(seed).standard_normal(out.shape).astype(out.dtype)
        return (out * Tensor(probe)).sum()

    for t in tensors:
        t.grad = None
    scalar().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    errors, failures = [], []
    worst, worst_err = "", -1.0
    for t, name, grad in zip(tensors, names, analytic):
        flat = t.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = float(scalar().data)
            flat[i] = orig - eps
            minus = float(scalar().data)
            flat[i] = orig
            numeric[i] = (plus - minus) / (2.0 * eps)
        # near-zero entries are judged against the tensor's gradient scale
        floor = max(rel_floor * float(np.abs(numeric).max(initial=0.0)), 1e-8)
        errs = rel_error(grad.reshape(-1), numeric, floor)
        errors.extend(errs.tolist())
        i = int(np.argmax(errs)) if errs.size else 0
        if errs.size and errs[i] > worst_err:
            worst_err, worst = float(errs[i]), f"{name}[{i}]"
        for i in np.flatnonzero(errs > tol):
            failures.append((name, int(i), float(grad.reshape(-1)[i]), float(numeric[i])))
    for t in tensors:
        t.grad = None
    errors = np.asarray(errors)
    return GradCheckReport(float(errors.max()) if errors.size else 0.0,
                           float(errors.mean()) if errors.size else 0.0,
                           int(errors.size), tol, worst, failures)
