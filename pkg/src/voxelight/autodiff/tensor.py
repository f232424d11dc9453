"""Reverse-mode automatic differentiation over numpy arrays.

Operations record themselves onto an explicitly managed :class:`Tape`
while one is active (``with Tape() as tape:``).  ``Tape.backward`` then
walks the recording in reverse and accumulates gradients into leaf
tensors.  Outside a tape block every op is plain numpy with no
bookkeeping, so inference costs nothing extra.

Dtype policy: tensors are C-contiguous float32 or float64.  Mixing the
two in a single op raises instead of silently promoting; gradient
arrays always match the data dtype.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_active_tape: "Tape | None" = None


def active_tape() -> "Tape | None":
    """Return the tape currently recording, or None."""
    return _active_tape


class Tensor:
    """A numpy array plus gradient metadata.

    ``grad`` is populated (and accumulated across backward passes) only
    for leaf tensors with ``requires_grad=True``; intermediate gradients
    live on the tape and can be inspected with ``Tape.grad_of``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.ascontiguousarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """A defensive copy of the underlying array."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; heavy ops live in voxelight.autodiff.ops
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ConfigError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)


def parameter(data, name: str = "", dtype=None) -> Tensor:
    """A leaf tensor that wants gradients; float dtype of the input wins."""
    arr = np.asarray(data) if dtype is None else np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=True, name=name)


class Tape:
    """Ordered record of ops for one forward pass.

    Nodes hold (output, inputs, backward_fn); backward_fn maps the
    output gradient to one gradient array (or None) per input.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._grads: dict[int, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise ConfigError("tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        global _active_tape
        _active_tape = None
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._nodes.append((out, inputs, backward))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad."""
        if seed is None:
            if loss.data.size != 1:
                raise ConfigError("backward needs a scalar loss or an explicit seed")
            seed = np.ones_like(loss.data)
        grads = self._grads
        grads.clear()
        grads[id(loss)] = np.ascontiguousarray(seed, dtype=loss.data.dtype)
        leaves: dict[int, Tensor] = {}
        for out, inputs, backward_fn in reversed(self._nodes):
            g_out = grads.get(id(out))
            if g_out is None:
                continue
            g_inputs = backward_fn(g_out)
            for t, g in zip(inputs, g_inputs):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.data.shape:
                    raise ConfigError(
                        f"backward produced gradient of shape {g.shape} for input of shape {t.data.shape}"
                    )
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g.astype(t.data.dtype, copy=False)
                if t._leaf:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads[key]
            t.grad = g.copy() if t.grad is None else t.grad + g

    def grad_of(self, t: Tensor) -> np.ndarray | None:
        """Gradient of the last backward pass w.r.t. any recorded tensor."""
        return self._grads.get(id(t))


def apply(
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result, recording it when a tape is active.

    This is the single extension point: renderer and geometry kernels
    register themselves through it without subclassing anything.
    """
    inputs = tuple(inputs)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    tape = _active_tape
    if tape is not None and requires:
        out._leaf = False
        tape.record(out, inputs, backward)
    return out


def _check_binary(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ConfigError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")
    if a.data.shape != b.data.shape:
        raise ConfigError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b)
    return apply((a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b)
    return apply((a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b)
    return apply((a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return apply((a,), a.data + a.data.dtype.type(s), lambda g: (g,))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return apply((a,), a.data * a.data.dtype.type(s), lambda g: (g * a.data.dtype.type(s),))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a whole tensor by a single-element tensor (both differentiable)."""
    if s.data.size != 1:
        raise ConfigError("scale_by expects a single-element scale tensor")
    if a.data.dtype != s.data.dtype:
        raise ConfigError(f"dtype mismatch: {a.data.dtype} vs {s.data.dtype}")
    sval = s.data.reshape(())

    def backward(g):
        return g * sval, np.sum(g * a.data).reshape(s.data.shape)

    return apply((a, s), a.data * sval, backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    in_shape = a.data.shape
    return apply((a,), a.data.reshape(shape), lambda g: (g.reshape(in_shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return apply((a,), np.ascontiguousarray(a.data.transpose(axes)), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def sum_all(a: Tensor) -> Tensor:
    return apply((a,), np.sum(a.data).reshape(()), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return apply(
        (a,),
        np.mean(a.data).reshape(()),
        lambda g: ((np.broadcast_to(g, a.data.shape) / a.data.dtype.type(n)).astype(a.data.dtype),),
    )
