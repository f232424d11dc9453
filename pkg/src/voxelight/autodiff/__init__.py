"""Numpy reverse-mode autodiff: tensors, tape, ops, modules, Adam."""

from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    add_scalar,
    apply,
    mean_all,
    mul,
    mul_scalar,
    parameter,
    permute,
    reshape,
    scale_by,
    sub,
    sum_all,
)
from .ops import (
    bilinear_downsample,
    bmm,
    bmv,
    concat,
    conv_transpose2d,
    cross,
    exp,
    gather_rows,
    leaky_relu,
    linear,
    mae,
    matmul,
    mse,
    narrow,
    normalize_rows,
    row_norms,
    relu,
    rotation_from_axis_angle,
    slab_to_payload,
    softplus,
    tile_slots,
    transpose_last2,
)
from .nn import ConvTranspose2d, Linear, Module
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import analytic_gradients, gradient_error, numeric_gradients

__all__ = [
    "Adam",
    "ConvTranspose2d",
    "Linear",
    "Module",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "add_scalar",
    "analytic_gradients",
    "apply",
    "bilinear_downsample",
    "bmm",
    "bmv",
    "concat",
    "conv_transpose2d",
    "cross",
    "exp",
    "gather_rows",
    "gradient_error",
    "leaky_relu",
    "linear",
    "load_checkpoint",
    "mae",
    "matmul",
    "mean_all",
    "mse",
    "mul",
    "mul_scalar",
    "narrow",
    "normalize_rows",
    "row_norms",
    "numeric_gradients",
    "parameter",
    "permute",
    "relu",
    "reshape",
    "rotation_from_axis_angle",
    "save_checkpoint",
    "scale_by",
    "slab_to_payload",
    "softplus",
    "sub",
    "sum_all",
    "tile_slots",
    "transpose_last2",
]
