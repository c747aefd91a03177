"""Training losses: reconstruction, perceptual, underwater dark channel and
light field consistency, plus their weighted sum.

Every loss takes N,3,H,W tensors (H,W,3 arrays are accepted and treated as a
batch of one) and returns a scalar tensor on the active tape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ShapeError
from .features import FeatureExtractor
from .lightfield import DEFAULT_SIGMAS, LightFieldMap, capture_lf
from .numerics import Tensor
from .physics import DEFAULT_UDC_WINDOW, underwater_dark_channel

TERMS = ("rec", "per", "udc", "lfc")


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    per: float = 1.0
    udc: float = 1.0
    lfc: float = 1.0

    def __post_init__(self):
        values = [getattr(self, t) for t in TERMS]
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ConfigError(f"loss weights must be finite and >= 0, got {values}")
        if not any(v > 0 for v in values):
            raise ConfigError("at least one loss weight must be positive")

    def active(self) -> tuple[str, ...]:
        return tuple(t for t in TERMS if getattr(self, t) > 0)


def as_batch(x) -> Tensor:
    if isinstance(x, Tensor):
        t = x
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 3:
            arr = np.transpose(arr, (2, 0, 1))
        t = Tensor._wrap(arr)
    if t.ndim == 3:
        t = nx.reshape(t, (1,) + t.shape)
    if t.ndim != 4 or t.shape[1] != 3:
        raise ShapeError(f"expected N,3,H,W images, got {t.shape}")
    return t


def _same(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def rec_loss(pred, target) -> Tensor:
    """Mean absolute error."""
    pred, target = as_batch(pred), as_batch(target)
    _same(pred, target)
    return nx.mean(nx.abs(nx.sub(pred, target)))


def perceptual_loss(pred, target, fx: FeatureExtractor) -> Tensor:
    """Sum over taps of ||phi_j(pred) - phi_j(target)||^2 / (C_j H_j W_j), batch-averaged."""
    pred, target = as_batch(pred), as_batch(target)
    _same(pred, target)
    total = None
    for fp, ft in zip(fx.features(pred), fx.features(target)):
        term = nx.mean(nx.square(nx.sub(fp, ft)))
        total = term if total is None else nx.add(total, term)
    return total


def udc_loss(pred, target, window: int = DEFAULT_UDC_WINDOW) -> Tensor:
    """Mean absolute difference of the underwater dark channels."""
    pred, target = as_batch(pred), as_batch(target)
    _same(pred, target)
    return nx.mean(nx.abs(nx.sub(underwater_dark_channel(pred, window),
                                 underwater_dark_channel(target, window))))


def _lf_reference(lf_map, like: Tensor) -> Tensor:
    if isinstance(lf_map, LightFieldMap):
        lf_map = lf_map.planes
    ref = as_batch(lf_map)
    if ref.shape[0] == 1 and like.shape[0] > 1:
        ref = Tensor._wrap(np.broadcast_to(ref.data, like.shape))
    return ref


def lfc_loss(pred, lf_map, sigmas: Sequence[float] = DEFAULT_SIGMAS) -> Tensor:
    """Mean |LF(pred) - LF(lf_map)| with LF the multi-scale Gaussian capture.

    ``lf_map`` is the extracted light field map of the exemplar (or, when the
    trainer is configured that way, the exemplar itself).
    """
    pred = as_batch(pred)
    ref = _lf_reference(lf_map, pred)
    _same(pred, ref)
    target_lf = Tensor._wrap(capture_lf(Tensor._wrap(ref.data), sigmas).data)
    return nx.mean(nx.abs(nx.sub(capture_lf(pred, sigmas), target_lf)))


def total_loss(pred, target, lf_map, weights: LossWeights, fx: FeatureExtractor | None,
               window: int = DEFAULT_UDC_WINDOW, sigmas: Sequence[float] = DEFAULT_SIGMAS,
               ) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the active terms and a per-term breakdown.

    Terms with zero weight are neither computed nor reported.
    """
    if not any(getattr(weights, t) > 0 for t in TERMS):
        raise ConfigError("all loss weights are zero")
    parts: dict[str, Tensor] = {}
    if weights.rec > 0:
        parts["rec"] = rec_loss(pred, target)
    if weights.per > 0:
        if fx is None:
            raise ConfigError("perceptual loss requires a feature extractor")
        parts["per"] = perceptual_loss(pred, target, fx)
    if weights.udc > 0:
        parts["udc"] = udc_loss(pred, target, window)
    if weights.lfc > 0:
        parts["lfc"] = lfc_loss(pred, lf_map, sigmas)
    total = None
    for name, value in parts.items():
        term = nx.scale(value, getattr(weights, name))
        total = term if total is None else nx.add(total, term)
    return total, {name: value.item() for name, value in parts.items()}
