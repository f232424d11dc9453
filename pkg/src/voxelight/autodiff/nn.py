"""Small module system: parameter containers with named state dicts."""

from __future__ import annotations

import numpy as np

from ..errors import CheckpointError, ConfigError
from .tensor import Tensor, parameter


class Module:
    """Base container; discovers parameters from attribute order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{name}.{i}", item))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise CheckpointError(f"state dict mismatch; missing={missing} unexpected={extra}")
        for name, t in params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = np.ascontiguousarray(arr, dtype=t.data.dtype)

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        if in_features <= 0 or out_features <= 0:
            raise ConfigError("linear layer sizes must be positive")
        self.weight = parameter(_he_normal(rng, (out_features, in_features), in_features, dtype))
        self.bias = parameter(np.zeros(out_features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        from .ops import linear

        return linear(x, self.weight, self.bias)


class ConvTranspose2d(Module):
    """Fixed 4x4 kernel, stride 2, padding 1: doubles H and W."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype=np.float32):
        if in_channels <= 0 or out_channels <= 0:
            raise ConfigError("conv channel counts must be positive")
        fan_in = in_channels * 16
        self.weight = parameter(_he_normal(rng, (in_channels, out_channels, 4, 4), fan_in, dtype))
        self.bias = parameter(np.zeros(out_channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        from .ops import conv_transpose2d

        return conv_transpose2d(x, self.weight, self.bias)
