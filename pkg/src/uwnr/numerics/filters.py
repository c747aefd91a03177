"""Gaussian kernels and the separable, reflect-padded Gaussian blur."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import ConfigError, ShapeError
from .conv import reflect_index
from .tensor import Tensor, as_tensor, record


def kernel_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


def _kernel(sigma: float) -> np.ndarray:
    if not sigma > 0 or not math.isfinite(sigma):
        raise ConfigError(f"gaussian sigma must be positive, got {sigma}")
    r = kernel_radius(sigma)
    i = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_kernel_1d(sigma: float) -> Tensor:
    """Normalised 1-D Gaussian of radius ceil(3*sigma)."""
    return Tensor._wrap(_kernel(float(sigma)))


@lru_cache(maxsize=256)
def _blur_operator(n: int, sigma: float) -> np.ndarray:
    """n x n matrix of the reflect-padded 1-D Gaussian pass along one axis.

    Row i holds the weights that output sample i collects from the input, with
    the padded taps folded back onto their reflected source samples.
    """
    k = _kernel(sigma)
    r = (k.size - 1) // 2
    src = reflect_index(n, r)
    taps = src[np.arange(n)[:, None] + np.arange(k.size)[None, :]]
    op = np.zeros((n, n))
    np.add.at(op, (np.repeat(np.arange(n), k.size), taps.ravel()), np.tile(k, n))
    op.flags.writeable = False
    return op


def separable_gaussian_blur(image, sigma: float) -> Tensor:
    """Blur the last two axes of ``image`` (e.g. C,H,W or N,C,H,W).

    Horizontal pass first, then vertical, both with reflect padding.
    """
    x = as_tensor(image)
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ShapeError(f"blur needs at least a 2-D image, got {x.shape}")
    sigma = float(sigma)
    op_h = _blur_operator(x.shape[-2], sigma)
    op_w = _blur_operator(x.shape[-1], sigma)
    out = op_h @ (np.ascontiguousarray(x.data) @ op_w.T)
    return record(out, (x,), lambda g: (op_h.T @ (g @ op_w),))
