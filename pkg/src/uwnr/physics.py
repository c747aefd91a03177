"""Physical imaging-model baseline and the underwater dark channel.

The baseline renderer blends a clean image with a background light through
a depth-dependent transmission ``t = exp(-beta * d)``. The underwater dark
channel (min over green/blue and a local window) lives here because both the
loss suite and the DCP ablation use it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ShapeError
from .numerics import Tensor

DEFAULT_UDC_WINDOW = 15


def _channel_triple(values, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.size == 1:
        arr = np.repeat(arr, 3)
    if arr.shape != (3,):
        raise ConfigError(f"{name} must be a scalar or 3 values, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ScatterParams:
    beta: np.ndarray
    background: np.ndarray

    def __init__(self, beta, background):
        beta = _channel_triple(beta, "beta")
        background = _channel_triple(background, "background")
        if np.any(beta < 0) or not np.all(np.isfinite(beta)):
            raise ConfigError(f"beta must be finite and >= 0, got {beta}")
        if np.any(background < 0) or np.any(background > 1):
            raise ConfigError(f"background must lie in [0, 1], got {background}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "background", background)


def as_depth(depth) -> np.ndarray:
    """Validate a depth map (H,W or H,W,1 or 1,H,W) and return it as H,W."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3 and d.shape[2] == 1:
        d = d[..., 0]
    elif d.ndim == 3 and d.shape[0] == 1:
        d = d[0]
    if d.ndim != 2:
        raise ShapeError(f"depth map must be H x W (x 1), got {np.shape(depth)}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ConfigError("depth values must be finite and non-negative")
    return d


def transmission_from_depth(depth, beta) -> np.ndarray:
    """Per-channel transmission exp(-beta_c * d), shape 3,H,W."""
    d = as_depth(depth)
    beta = _channel_triple(beta, "beta")
    if np.any(beta < 0):
        raise ConfigError(f"beta must be >= 0, got {beta}")
    return np.exp(-beta[:, None, None] * d[None])


def render_physical(clean, t, background) -> np.ndarray:
    """I = J * t + B * (1 - t), clamped to [0, 1]. ``clean`` is H,W,3; ``t`` is 3,H,W."""
    j = np.asarray(clean, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if j.ndim != 3 or j.shape[2] != 3:
        raise ShapeError(f"clean image must be H x W x 3, got {j.shape}")
    if t.shape != (3,) + j.shape[:2]:
        raise ShapeError(f"transmission shape {t.shape} does not match image {j.shape}")
    b = _channel_triple(background, "background")
    tt = np.transpose(t, (1, 2, 0))
    return np.clip(j * tt + b * (1.0 - tt), 0.0, 1.0)


def render_with_params(clean, depth, params: ScatterParams) -> np.ndarray:
    return render_physical(clean, transmission_from_depth(depth, params.beta), params.background)


def _check_window(window: int) -> int:
    if int(window) != window or window < 1 or window % 2 == 0:
        raise ConfigError(f"dark channel window must be an odd integer >= 1, got {window}")
    return int(window)


def underwater_dark_channel(image, window: int = DEFAULT_UDC_WINDOW) -> Tensor:
    """min over a clipped window of min(g, b).

    ``image`` is an H,W,3 array (returns 1,H,W) or an N,3,H,W tensor (returns
    N,1,H,W, differentiable).
    """
    window = _check_window(window)
    if isinstance(image, Tensor):
        x, batched = image, True
    else:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected an H x W x 3 image, got {arr.shape}")
        x, batched = Tensor._wrap(np.transpose(arr, (2, 0, 1))[None]), False
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected N,3,H,W, got {x.shape}")
    gb = nx.amin(x[:, 1:3], axis=1, keepdims=True)
    udc = nx.min_pool2d(gb, window)
    return udc if batched else udc[0]


def dark_channel(image: np.ndarray, window: int = DEFAULT_UDC_WINDOW) -> np.ndarray:
    """Classic all-channel dark channel of an H,W,3 image (no gradient)."""
    window = _check_window(window)
    x = Tensor._wrap(np.asarray(image, dtype=np.float64).min(axis=2)[None, None])
    return nx.min_pool2d(x, window).data[0, 0]


def dcp_background_light(image: np.ndarray, window: int = DEFAULT_UDC_WINDOW,
                         top_fraction: float = 0.001) -> np.ndarray:
    """Background light as the mean colour of the brightest dark-channel pixels."""
    img = np.asarray(image, dtype=np.float64)
    dc = dark_channel(img, window).ravel()
    count = max(1, int(np.floor(dc.size * top_fraction)))
    # Stable sort keeps the pick deterministic under ties.
    idx = np.argsort(-dc, kind="stable")[:count]
    return img.reshape(-1, 3)[idx].mean(axis=0)
