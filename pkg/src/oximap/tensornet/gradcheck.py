"""Finite-difference verification of analytic gradients.

Central differences in double precision:

    g_num[i] = (f(x + h e_i) - f(x - h e_i)) / (2 h)

compared elementwise against the backward-pass gradient. The relative
error uses |num| + |an| in the denominator with a 1e-12 floor so that
near-zero coordinate pairs do not blow up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

__all__ = ["GradReport", "grad_check"]


@dataclass(frozen=True)
class GradReport:
    """Worst relative error per checked tensor, plus the global maximum."""

    per_tensor: dict[str, float]
    max_rel_error: float

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _flat_indices(size: int, max_coords: int | None, rng: np.random.Generator | None) -> np.ndarray:
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    if rng is None:
        rng = np.random.default_rng(0)
    return rng.choice(size, size=max_coords, replace=False)


def grad_check(
    fn,
    tensors: dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradReport:
    """Check d fn / d tensor for every tensor in `tensors`.

    fn() must build the graph from the current tensor data and return a
    scalar Tensor. Tensors are promoted to float64 in place for the check
    (h=1e-5 under float32 loses all significance) and left in float64.
    When max_coords is given, only that many randomly chosen coordinates
    per tensor are perturbed; the analytic side is still full.
    """
    for t in tensors.values():
        t.data = np.asarray(t.data, dtype=np.float64)
        t.requires_grad = True
        t.grad = None

    out = fn()
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar objective")
    out.backward()
    analytic = {}
    for name, t in tensors.items():
        if t.grad is None:
            raise ValueError(f"tensor {name!r} received no gradient")
        analytic[name] = np.asarray(t.grad, dtype=np.float64).copy()

    per_tensor: dict[str, float] = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in _flat_indices(flat.size, max_coords, rng):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * h)
            an = float(an_flat[i])
            rel = abs(num - an) / max(1e-12, abs(num) + abs(an))
            if rel > worst:
                worst = rel
        per_tensor[name] = worst

    return GradReport(per_tensor=per_tensor, max_rel_error=max(per_tensor.values()) if per_tensor else 0.0)
