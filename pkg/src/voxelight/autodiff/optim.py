"""Adam optimizer with checkpointable state."""

from __future__ import annotations

import numpy as np

from ..errors import CheckpointError, ConfigError
from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction.

    update: m <- b1 m + (1-b1) g ; v <- b2 v + (1-b2) g^2
            p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if not params:
            raise ConfigError("optimizer needs at least one parameter")
        if not (0.0 < lr and 0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0 and eps > 0.0):
            raise ConfigError("invalid Adam hyperparameters")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat array view of optimizer state for checkpointing."""
        out: dict[str, np.ndarray] = {"adam.t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self._m, self._v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        if "adam.t" not in state:
            raise CheckpointError("optimizer state missing step counter")
        self.t = int(state["adam.t"].reshape(-1)[0])
        for i, (p, m, v) in enumerate(zip(self.params, self._m, self._v)):
            km, kv = f"adam.m.{i}", f"adam.v.{i}"
            if km not in state or kv not in state:
                raise CheckpointError(f"optimizer state missing moment arrays for parameter {i}")
            if state[km].shape != p.data.shape:
                raise CheckpointError(f"optimizer moment shape mismatch for parameter {i}")
            m[...] = state[km]
            v[...] = state[kv]
