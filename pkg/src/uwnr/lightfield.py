"""Natural light field retention.

The light field map of an underwater exemplar is its low-frequency
illumination: the average of several wide Gaussian blurs, moved to the log
domain and min-max normalised. The same filter bank without the log and the
normalisation (:func:`capture_lf`) is what the consistency loss compares.

Images at the public boundary are ``H x W x 3`` numpy arrays in [0, 1];
tensors are channels-first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ShapeError
from .numerics import Tensor

DEFAULT_SIGMAS = (15.0, 60.0, 90.0)
DEFAULT_EPSILON = 1e-6
# Log-domain spans below this are treated as a constant map.
DEGENERATE_SPAN = 1e-10


@dataclass(frozen=True)
class LightFieldMap:
    planes: np.ndarray  # 3,H,W in [0, 1]
    source_id: str = ""
    sigmas: tuple[float, ...] = field(default=DEFAULT_SIGMAS)

    def __post_init__(self):
        if self.planes.ndim != 3 or self.planes.shape[0] != 3:
            raise ShapeError(f"light field planes must be 3,H,W, got {self.planes.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1], self.planes.shape[2]

    def to_image(self) -> np.ndarray:
        return np.transpose(self.planes, (1, 2, 0))


def _check_sigmas(sigmas: Sequence[float]) -> tuple[float, ...]:
    sigmas = tuple(float(s) for s in sigmas)
    if not sigmas:
        raise ConfigError("at least one sigma is required")
    for s in sigmas:
        if not s > 0:
            raise ConfigError(f"sigma must be positive, got {s}")
    return sigmas


def to_chw(image) -> Tensor:
    """ImagePlane (H,W,3 ndarray) -> Tensor (3,H,W); tensors pass through."""
    if isinstance(image, Tensor):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got {arr.shape}")
    return Tensor._wrap(np.ascontiguousarray(np.transpose(arr, (2, 0, 1))))


def multiscale_gaussian(image, sigmas: Sequence[float] = DEFAULT_SIGMAS) -> Tensor:
    """Average of Gaussian blurs over ``sigmas``, per channel.

    Blurs are summed in sorted sigma order, so the result does not depend on
    how the caller orders the list.
    """
    sigmas = _check_sigmas(sigmas)
    x = to_chw(image)
    acc = None
    for s in sorted(sigmas):
        b = nx.separable_gaussian_blur(x, s)
        acc = b if acc is None else nx.add(acc, b)
    return nx.scale(acc, 1.0 / len(sigmas))


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Joint min-max over all channels to [0, 1]; a flat input maps to 0.5."""
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= DEGENERATE_SPAN:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


def extract_light_field(exemplar, sigmas: Sequence[float] = DEFAULT_SIGMAS,
                        epsilon: float = DEFAULT_EPSILON, source_id: str = "") -> LightFieldMap:
    """Light field map of a real underwater image."""
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    sigmas = _check_sigmas(sigmas)
    smooth = multiscale_gaussian(exemplar, sigmas).data
    planes = minmax_normalize(np.log(smooth + epsilon))
    return LightFieldMap(planes=planes, source_id=source_id, sigmas=sigmas)


def capture_lf(image, sigmas: Sequence[float] = DEFAULT_SIGMAS) -> Tensor:
    """Differentiable light field capture used by the consistency loss.

    Accepts a 3,H,W / N,3,H,W tensor or an H,W,3 image; no log, no normalisation.
    """
    return multiscale_gaussian(image, sigmas)
