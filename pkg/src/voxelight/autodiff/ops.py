"""Differentiable building blocks used by the decoder and renderer.

Every op validates shapes and dtypes up front and supplies an analytic
backward closure; finite-difference tests pin each one down.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import ConfigError
from .tensor import Tensor, apply

# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply((x,), np.where(mask, x.data, x.data.dtype.type(0)), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    slope_t = x.data.dtype.type(slope)
    mask = x.data > 0
    out = np.where(mask, x.data, x.data * slope_t)
    return apply((x,), out, lambda g: (np.where(mask, g, g * slope_t),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), evaluated in the overflow-safe split form."""
    d = x.data
    e = np.exp(-np.abs(d.astype(np.float64)))
    out = np.maximum(d, 0) + np.log1p(e).astype(d.dtype)
    sig = (np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))).astype(d.dtype)
    return apply((x,), out.astype(d.dtype), lambda g: (g * sig,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply((x,), out, lambda g: (g * out,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.dtype != b.data.dtype:
        raise ConfigError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ConfigError(f"matmul shapes do not chain: {a.data.shape} @ {b.data.shape}")
    return apply((a, b), a.data @ b.data, lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of row vectors: [B, F_in] x [F_out, F_in] (+ [F_out])."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise ConfigError(f"linear shapes incompatible: x {x.data.shape}, weight {weight.data.shape}")
    out = x.data @ weight.data.T
    if bias is None:
        return apply((x, weight), out, lambda g: (g @ weight.data, g.T @ x.data))
    if bias.data.shape != (weight.data.shape[0],):
        raise ConfigError(f"bias shape {bias.data.shape} does not match {weight.data.shape[0]} outputs")
    out = out + bias.data

    def backward(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return apply((x, weight, bias), out, backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [K, m, n] @ [K, n, p]."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ConfigError(f"bmm shapes do not chain: {a.data.shape} @ {b.data.shape}")
    out = np.einsum("kmn,knp->kmp", a.data, b.data)

    def backward(g):
        return (
            np.einsum("kmp,knp->kmn", g, b.data),
            np.einsum("kmn,kmp->knp", a.data, g),
        )

    return apply((a, b), out, backward)


def bmv(a: Tensor, v: Tensor) -> Tensor:
    """Batched matrix-vector product [K, m, n] @ [K, n]."""
    if a.data.ndim != 3 or v.data.ndim != 2 or a.data.shape[0] != v.data.shape[0] or a.data.shape[2] != v.data.shape[1]:
        raise ConfigError(f"bmv shapes do not chain: {a.data.shape} @ {v.data.shape}")
    out = np.einsum("kmn,kn->km", a.data, v.data)

    def backward(g):
        return (
            np.einsum("km,kn->kmn", g, v.data),
            np.einsum("kmn,km->kn", a.data, g),
        )

    return apply((a, v), out, backward)


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cross product of [K, 3] stacks."""
    if a.data.shape != b.data.shape or a.data.ndim != 2 or a.data.shape[1] != 3:
        raise ConfigError(f"cross expects matching [K,3] inputs, got {a.data.shape} and {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ConfigError("cross dtype mismatch")
    out = np.cross(a.data, b.data)

    def backward(g):
        return np.cross(b.data, g), np.cross(g, a.data)

    return apply((a, b), out, backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of [V, D] by an integer index array; grad scatter-adds."""
    if x.data.ndim != 2:
        raise ConfigError(f"gather_rows expects a 2-d tensor, got {x.data.shape}")
    idx = np.asarray(index)
    if idx.ndim != 1 or idx.dtype.kind not in "iu":
        raise ConfigError("gather_rows index must be a 1-d integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ConfigError("gather_rows index out of range")

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return apply((x,), np.ascontiguousarray(x.data[idx]), backward)


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ConfigError("transpose_last2 needs at least 2 dims")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))
    return apply((a,), out, lambda g: (np.ascontiguousarray(np.swapaxes(g, -1, -2)),))


def normalize_rows(x: Tensor, eps: float = 0.0) -> Tensor:
    """Unit-normalize along the last axis; zero rows raise unless eps > 0."""
    d = x.data
    norm = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
    if eps <= 0.0 and np.any(norm == 0):
        raise ConfigError("cannot normalize a zero-length row")
    norm = norm + d.dtype.type(eps)
    y = d / norm

    def backward(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return ((g - y * dot) / norm,)

    return apply((x,), y, backward)


# ---------------------------------------------------------------------------
# losses


def row_norms(x: Tensor) -> Tensor:
    """Euclidean norm of each row of [K, D] -> [K, 1]; zero rows raise."""
    d = x.data
    if d.ndim != 2:
        raise ConfigError(f"row_norms expects a 2d tensor, got {d.shape}")
    norm = np.sqrt(np.sum(d * d, axis=1, keepdims=True))
    if np.any(norm == 0):
        raise ConfigError("zero-length row has no direction")

    def backward(g):
        return (g / norm * d,)

    return apply((x,), norm, backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.dtype != b.data.dtype:
        raise ConfigError(f"mse expects matching tensors, got {a.data.shape}/{a.data.dtype} and {b.data.shape}/{b.data.dtype}")
    diff = a.data - b.data
    n = a.data.dtype.type(a.data.size)
    out = np.mean(diff * diff).reshape(())

    def backward(g):
        scale = g * 2.0 / n
        return scale * diff, -scale * diff

    return apply((a, b), out.astype(a.data.dtype), backward)


def mae(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.dtype != b.data.dtype:
        raise ConfigError(f"mae expects matching tensors, got {a.data.shape}/{a.data.dtype} and {b.data.shape}/{b.data.dtype}")
    diff = a.data - b.data
    n = a.data.dtype.type(a.data.size)
    sign = np.sign(diff)
    out = np.mean(np.abs(diff)).reshape(())

    def backward(g):
        scale = g / n
        return scale * sign, -scale * sign

    return apply((a, b), out.astype(a.data.dtype), backward)


# ---------------------------------------------------------------------------
# shape plumbing


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ConfigError("concat of nothing")
    dt = tensors[0].data.dtype
    for t in tensors:
        if t.data.dtype != dt:
            raise ConfigError("concat dtype mismatch")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return apply(tensors, out, backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    if not (0 <= start and start + length <= x.data.shape[axis]):
        raise ConfigError(f"narrow [{start}:{start + length}] out of range for axis {axis} of {x.data.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return apply((x,), np.ascontiguousarray(x.data[idx]), backward)


# ---------------------------------------------------------------------------
# transposed convolution, fixed kernel 4 / stride 2 / padding 1
# (doubles spatial resolution; the only geometry the decoder uses)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Upsampling convolution: [C_in, H, W] -> [C_out, 2H, 2W].

    Weight layout is [C_in, C_out, 4, 4].
    """
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ConfigError(f"conv_transpose2d expects [C,H,W] and [Cin,Cout,4,4], got {x.data.shape} and {weight.data.shape}")
    cin, h, w = x.data.shape
    if weight.data.shape[0] != cin or weight.data.shape[2:] != (4, 4):
        raise ConfigError(f"weight shape {weight.data.shape} does not match input channels {cin} with a 4x4 kernel")
    if x.data.dtype != weight.data.dtype:
        raise ConfigError("conv_transpose2d dtype mismatch")
    cout = weight.data.shape[1]
    xd, wd = x.data, weight.data

    # scatter into the uncropped (2H+2, 2W+2) canvas, then trim one ring
    full = np.zeros((cout, 2 * h + 2, 2 * w + 2), dtype=xd.dtype)
    for p in range(4):
        for q in range(4):
            full[:, p : p + 2 * h : 2, q : q + 2 * w : 2] += np.einsum("chw,co->ohw", xd, wd[:, :, p, q])
    out = np.ascontiguousarray(full[:, 1 : 1 + 2 * h, 1 : 1 + 2 * w])
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ConfigError(f"bias shape {bias.data.shape} does not match {cout} output channels")
        out = out + bias.data[:, None, None]

    def backward(g):
        gfull = np.zeros((cout, 2 * h + 2, 2 * w + 2), dtype=g.dtype)
        gfull[:, 1 : 1 + 2 * h, 1 : 1 + 2 * w] = g
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for p in range(4):
            for q in range(4):
                sl = gfull[:, p : p + 2 * h : 2, q : q + 2 * w : 2]
                gx += np.einsum("ohw,co->chw", sl, wd[:, :, p, q])
                gw[:, :, p, q] = np.einsum("chw,ohw->co", xd, sl)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply(inputs, out, backward)


# ---------------------------------------------------------------------------
# bilinear (triangle-filter) downsampling


@lru_cache(maxsize=64)
def _triangle_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    """Row-stochastic [n_out, n_in] triangle filter for n_in -> n_out."""
    scale = n_in / n_out
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale
        j0 = max(0, int(np.floor(center - scale)))
        j1 = min(n_in, int(np.ceil(center + scale)) + 1)
        for j in range(j0, j1):
            t = abs((j + 0.5 - center) / scale)
            if t < 1.0:
                mat[i, j] = 1.0 - t
        mat[i] /= mat[i].sum()
    return mat.astype(np.dtype(dtype_name))


def bilinear_downsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Averaging resize of [C, H, W] with a triangle kernel of radius H/out_h.

    Only reduction (or identity) is supported; the decoder never needs
    to enlarge its conditioning maps.
    """
    if x.data.ndim != 3:
        raise ConfigError(f"bilinear_downsample expects [C,H,W], got {x.data.shape}")
    c, h, w = x.data.shape
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise ConfigError(f"bilinear_downsample cannot go from {h}x{w} to {out_h}x{out_w}")
    if out_h == h and out_w == w:
        return apply((x,), x.data.copy(), lambda g: (g,))
    dh = _triangle_matrix(h, out_h, x.data.dtype.name)
    dw = _triangle_matrix(w, out_w, x.data.dtype.name)
    out = np.einsum("ij,cjk,lk->cil", dh, x.data, dw, optimize=True)

    def backward(g):
        return (np.einsum("cil,ij,lk->cjk", g, dh, dw, optimize=True),)

    return apply((x,), np.ascontiguousarray(out), backward)


# ---------------------------------------------------------------------------
# axis-angle -> rotation matrices (Rodrigues form)


def _cross_matrices(v: np.ndarray) -> np.ndarray:
    """[K, 3] -> [K, 3, 3] skew-symmetric cross-product matrices."""
    k = v.shape[0]
    m = np.zeros((k, 3, 3), dtype=v.dtype)
    m[:, 0, 1] = -v[:, 2]
    m[:, 0, 2] = v[:, 1]
    m[:, 1, 0] = v[:, 2]
    m[:, 1, 2] = -v[:, 0]
    m[:, 2, 0] = -v[:, 1]
    m[:, 2, 1] = v[:, 0]
    return m


_TAYLOR_ANGLE = 1e-4


def rotation_from_axis_angle(omega: Tensor) -> Tensor:
    """Exponential map [K, 3] -> [K, 3, 3] proper rotations.

    R = I + (sin t / t) W + ((1 - cos t) / t^2) W^2 with W = cross(omega),
    t = |omega|; series expansions keep tiny angles exact.
    """
    if omega.data.ndim != 2 or omega.data.shape[1] != 3:
        raise ConfigError(f"rotation_from_axis_angle expects [K,3], got {omega.data.shape}")
    w = omega.data.astype(np.float64)
    k = w.shape[0]
    theta2 = np.sum(w * w, axis=1)
    theta = np.sqrt(theta2)
    small = theta < _TAYLOR_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))
    wx = _cross_matrices(w)
    wx2 = np.einsum("kij,kjl->kil", wx, wx)
    rot = np.eye(3, dtype=np.float64)[None] + a[:, None, None] * wx + b[:, None, None] * wx2
    out = rot.astype(omega.data.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        grad = np.zeros((k, 3), dtype=np.float64)
        eye = np.eye(3, dtype=np.float64)
        # d(R)/d(w_i) = ((w_i W + cross(w x (I - R) e_i)) / t^2) R for t > 0,
        # and cross(e_i) in the zero-angle limit
        i_minus_r = eye[None] - rot
        for i in range(3):
            col = i_minus_r[:, :, i]
            cr = np.cross(w, col)
            num = w[:, i, None, None] * wx + _cross_matrices(cr)
            with np.errstate(invalid="ignore", divide="ignore"):
                dri = np.einsum("kab,kbc->kac", num, rot) / np.where(small, 1.0, theta2)[:, None, None]
            ei = np.zeros(3)
            ei[i] = 1.0
            dri_small = _cross_matrices(np.broadcast_to(ei, (k, 3)).astype(np.float64))
            dri = np.where(small[:, None, None], dri_small, dri)
            grad[:, i] = np.einsum("kab,kab->k", g64, dri)
        return (grad.astype(omega.data.dtype),)

    return apply((omega,), out, backward)


# ---------------------------------------------------------------------------
# uv-grid tiling helpers


def tile_slots(values: Tensor, n_side: int, tile: int) -> Tensor:
    """Paint per-slot vectors [K, C] as constant MxM tiles -> [C, n*M, n*M].

    Slot k occupies tile (k // n_side, k % n_side) in row-major order.
    """
    kk, c = values.data.shape
    if kk != n_side * n_side:
        raise ConfigError(f"{kk} slots do not fill an {n_side}x{n_side} grid")
    grid = values.data.reshape(n_side, n_side, c).transpose(2, 0, 1)
    out = np.repeat(np.repeat(grid, tile, axis=1), tile, axis=2)

    def backward(g):
        sums = g.reshape(c, n_side, tile, n_side, tile).sum(axis=(2, 4))
        return (np.ascontiguousarray(sums.transpose(1, 2, 0).reshape(kk, c)),)

    return apply((values,), np.ascontiguousarray(out), backward)


def slab_to_payload(img: Tensor, n_side: int, tile: int, channels: int) -> Tensor:
    """Unpack a decoded slab [C*M, n*M, n*M] into per-slot volumes [K, C, M, M, M].

    The channel axis packs (channel, depth) channel-major; tile (r, c)
    holds slot r*n_side + c.  Pure reindexing, so the gradient is the
    inverse permutation.
    """
    m = tile
    expect = (channels * m, n_side * m, n_side * m)
    if img.data.shape != expect:
        raise ConfigError(f"slab shape {img.data.shape} does not match {expect}")
    kk = n_side * n_side

    def fwd(a):
        v = a.reshape(channels, m, n_side, m, n_side, m)
        v = v.transpose(2, 4, 0, 1, 3, 5)
        return np.ascontiguousarray(v.reshape(kk, channels, m, m, m))

    def backward(g):
        v = g.reshape(n_side, n_side, channels, m, m, m)
        v = v.transpose(2, 3, 0, 4, 1, 5)
        return (np.ascontiguousarray(v.reshape(expect)),)

    return apply((img,), fwd(img.data), backward)
