"""Real spherical harmonics basis for encoding light directions.

Evaluates the orthonormal real basis up to a chosen band via the
standard associated-Legendre recurrences (no Condon-Shortley phase;
the sign is folded into the sine/cosine split instead).  Values are
ordered band-major: index l*l + l + m for m in [-l, l].
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def real_sh_basis(directions: np.ndarray, order: int) -> np.ndarray:
    """Evaluate real SH bands 0..order at unit directions.

    directions is [..., 3]; non-unit rows are normalized, zero rows
    raise.  Returns [..., (order + 1) ** 2] in float64.
    """
    if order < 0:
        raise ConfigError("order must be non-negative")
    d = np.asarray(directions, dtype=np.float64)
    if d.shape[-1] != 3:
        raise ConfigError("directions must have a trailing axis of size 3")
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ConfigError("zero-length direction has no harmonics")
    d = d / norm
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    sin_theta = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.arctan2(y, x)

    # associated Legendre P_l^m(z) without the (-1)^m phase, banded by m
    n_bands = order + 1
    p = {}
    p[(0, 0)] = np.ones_like(z)
    for m in range(1, n_bands):
        p[(m, m)] = (2 * m - 1) * sin_theta * p[(m - 1, m - 1)]
    for m in range(0, n_bands - 1):
        p[(m + 1, m)] = (2 * m + 1) * z * p[(m, m)]
    for m in range(0, n_bands):
        for l in range(m + 2, n_bands):
            p[(l, m)] = ((2 * l - 1) * z * p[(l - 1, m)] - (l + m - 1) * p[(l - 2, m)]) / (l - m)

    out = np.empty(d.shape[:-1] + (n_bands * n_bands,), dtype=np.float64)
    for l in range(n_bands):
        for m in range(0, l + 1):
            k = np.sqrt(
                (2 * l + 1)
                / (4.0 * np.pi)
                * np.exp(_log_factorial(l - m) - _log_factorial(l + m))
            )
            if m == 0:
                out[..., l * l + l] = k * p[(l, 0)]
            else:
                base = np.sqrt(2.0) * k * p[(l, m)]
                out[..., l * l + l + m] = base * np.cos(m * phi)
                out[..., l * l + l - m] = base * np.sin(m * phi)
    return out


def _log_factorial(n: int) -> float:
    return float(np.sum(np.log(np.arange(1, n + 1)))) if n > 1 else 0.0
