"""Image-level rendering: exemplar conditioning, optional pad-and-crop, and
the physical baseline."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ShapeError
from .lightfield import DEFAULT_SIGMAS, extract_light_field
from .network import Model, padding_hint, unet_forward
from .physics import DEFAULT_UDC_WINDOW, as_depth, dcp_background_light


@dataclass(frozen=True)
class Conditioning:
    """How an exemplar becomes the network's 3-plane conditioning input."""
    sigmas: tuple = DEFAULT_SIGMAS
    dcp: bool = False
    udc_window: int = DEFAULT_UDC_WINDOW

    @classmethod
    def from_meta(cls, meta: dict) -> "Conditioning":
        c = meta.get("conditioning") or {}
        return cls(tuple(c.get("sigmas", DEFAULT_SIGMAS)), bool(c.get("dcp", False)),
                   int(c.get("udc_window", DEFAULT_UDC_WINDOW)))

    def planes(self, exemplar: np.ndarray) -> np.ndarray:
        if self.dcp:
            bl = dcp_background_light(exemplar, self.udc_window)
            return np.broadcast_to(bl[:, None, None], (3,) + exemplar.shape[:2]).copy()
        return extract_light_field(exemplar, self.sigmas).planes


def fit_exemplar(exemplar: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    """Resample an exemplar to H x W (area interpolation) when sizes differ."""
    if exemplar.shape[:2] == tuple(hw):
        return exemplar
    out = cv2.resize(exemplar, (hw[1], hw[0]), interpolation=cv2.INTER_AREA)
    return np.clip(out, 0.0, 1.0)


def reflect_pad(arr: np.ndarray, ph: int, pw: int, channels_first: bool = False) -> np.ndarray:
    if not (ph or pw):
        return arr
    if channels_first:
        widths = [(0, 0), (0, ph), (0, pw)]
    else:
        widths = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, widths, mode="symmetric")


def render(clean: np.ndarray, depth: np.ndarray, exemplar: np.ndarray, model: Model,
           conditioning: Conditioning = Conditioning(), pad: bool = False) -> np.ndarray:
    """Render ``clean`` in the water of ``exemplar``; returns H,W,3.

    With ``pad`` the inputs are mirror-padded up to the network's size multiple
    and the output is cropped back.
    """
    h, w = clean.shape[:2]
    depth = as_depth(depth)
    if depth.shape != (h, w):
        raise ShapeError(f"depth {depth.shape} does not match image {h}x{w}")
    planes = conditioning.planes(fit_exemplar(exemplar, (h, w)))
    ph, pw = padding_hint(h, w, model.config.multiple)
    if pad and (ph or pw):
        out = unet_forward(reflect_pad(clean, ph, pw), reflect_pad(depth, ph, pw),
                           reflect_pad(planes, ph, pw, channels_first=True), model)
        return np.ascontiguousarray(out[:h, :w])
    return unet_forward(clean, depth, planes, model)
