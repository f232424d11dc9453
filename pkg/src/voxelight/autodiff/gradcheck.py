"""Finite-difference verification of recorded gradients.

The checker reruns a scalar-valued closure under central differences in
float64 and compares against one analytic backward pass.  Agreement is
scored per parameter block as  max|a - n| / max(max|a|, max|n|, tiny),
a scale-free error that is strict for O(1) gradients and still
meaningful when a block's gradient is uniformly small.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError
from .tensor import Tape, Tensor


def numeric_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> list[np.ndarray]:
    """Central differences; NaN marks entries skipped by max_entries sampling."""
    rng = np.random.default_rng(seed)
    grads = []
    for p in params:
        if p.data.dtype != np.float64:
            raise ConfigError("finite differences need float64 parameters")
        g = np.full_like(p.data, np.nan)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            entries = np.arange(flat.size)
        else:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for i in entries:
            keep = flat[i]
            flat[i] = keep + h
            hi = f().item()
            flat[i] = keep - h
            lo = f().item()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def gradient_error(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative disagreement across all parameter blocks."""
    analytic = analytic_gradients(f, params)
    numeric = numeric_gradients(f, params, h=h, max_entries=max_entries, seed=seed)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        checked = ~np.isnan(n)
        if not np.any(checked):
            continue
        a_c, n_c = a[checked], n[checked]
        denom = max(np.max(np.abs(a_c)), np.max(np.abs(n_c)), 1e-12)
        worst = max(worst, float(np.max(np.abs(a_c - n_c)) / denom))
    return worst
