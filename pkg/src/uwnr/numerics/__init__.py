"""Minimal dense tensor engine with reverse-mode automatic differentiation."""
from . import ops
from .conv import conv2d, conv_output_size, max_pool2d, min_pool2d, reflect_index
from .filters import gaussian_kernel_1d, kernel_radius, separable_gaussian_blur
from .ops import (
    abs, add, amax, amin, concat, div, exp, getitem, global_avg_pool, log, mean,
    mul, neg, relu, reshape, scale, sigmoid, square, sub, sum, upsample_nearest2x,
)
from .tensor import Tape, Tensor, as_tensor, backward, current_tape

__all__ = [
    "Tape", "Tensor", "as_tensor", "backward", "current_tape", "ops",
    "abs", "add", "amax", "amin", "concat", "conv2d", "conv_output_size", "div",
    "exp", "gaussian_kernel_1d", "getitem", "global_avg_pool", "kernel_radius",
    "log", "max_pool2d", "mean", "min_pool2d", "mul", "neg", "reflect_index",
    "relu", "reshape", "scale", "separable_gaussian_blur", "sigmoid", "square",
    "sub", "sum", "upsample_nearest2x",
]
