"""2-D convolution and sliding-window pooling on N,C,H,W tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, record

PAD_MODES = ("zero", "reflect")


def reflect_index(n: int, pad: int) -> np.ndarray:
    """Source index for every position of a reflect-padded axis of length n."""
    return np.pad(np.arange(n), (pad, pad), mode="reflect")


def _pad_hw(x: np.ndarray, pad: int, mode: str, fill: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    if mode == "reflect":
        rows = reflect_index(x.shape[-2], pad)
        cols = reflect_index(x.shape[-1], pad)
        return x[..., rows, :][..., cols]
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width, mode="constant", constant_values=fill)


def _unpad_hw(g: np.ndarray, shape: tuple[int, ...], pad: int, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad_hw`."""
    if pad == 0:
        return g
    if mode == "zero":
        return g[..., pad:-pad, pad:-pad]
    h, w = shape[-2], shape[-1]
    rows = reflect_index(h, pad)
    cols = reflect_index(w, pad)
    acc = np.zeros(g.shape[:-1] + (w,))
    np.add.at(acc, (..., cols), g)
    out = np.zeros(g.shape[:-2] + (h, w))
    np.add.at(out, (..., rows, slice(None)), acc)
    return out


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0,
           pad_mode: str = "zero") -> Tensor:
    """Cross-correlate ``x`` [N,C,H,W] with ``kernel`` [F,C,kH,kW].

    ``bias`` is an optional [F] tensor. Output size follows the usual
    floor((H + 2p - k) / s) + 1 rule.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ck}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel must be odd-sized, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride={stride} / padding={padding}")
    if pad_mode not in PAD_MODES:
        raise ConfigError(f"unknown pad_mode {pad_mode!r}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: {h}x{w} input too small for {kh}x{kw} kernel")

    xp = _pad_hw(x.data, padding, pad_mode)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # cols: N,C,Ho,Wo,kH,kW
    out = np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise ShapeError(f"conv2d bias must have shape ({f},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def vjp(g):
        gk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, kernel.data, axes=([1], [0]))  # N,Ho,Wo,C,kH,kW
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = _unpad_hw(gxp, x.shape, padding, pad_mode)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return record(np.ascontiguousarray(out), parents, vjp)


def _window_extreme(x, k: int, stride: int, padding: int, find_max: bool) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pooling expects N,C,H,W, got {x.shape}")
    if k < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"invalid pooling window={k} stride={stride} padding={padding}")
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"pooling window {k} larger than input {h}x{w}")
    # Padding with -inf/+inf never wins the comparison, which is the same as
    # clipping the window at the border.
    fill = -np.inf if find_max else np.inf
    xp = _pad_hw(x.data, padding, "zero", fill=fill)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    idx = (np.argmax if find_max else np.argmin)(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        rows = np.arange(ho)[:, None] * stride + idx // k
        cols = np.arange(wo)[None, :] * stride + idx % k
        gxp = np.zeros(xp.shape)
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        np.add.at(gxp, (nn[..., None, None], cc[..., None, None], rows, cols), g)
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        return (gxp,)

    return record(out, (x,), vjp)


def max_pool2d(x, kernel: int = 2, stride: int | None = None, padding: int = 0) -> Tensor:
    return _window_extreme(x, kernel, stride or kernel, padding, find_max=True)


def min_pool2d(x, kernel: int, stride: int = 1, padding: int | None = None) -> Tensor:
    """Spatial min filter; by default 'same' size with the window clipped at borders."""
    if padding is None:
        padding = (kernel - 1) // 2
    return _window_extreme(x, kernel, stride, padding, find_max=False)
