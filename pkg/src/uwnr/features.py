"""Frozen convolutional feature pyramid.

Stands in for the pretrained classification backbone a perceptual loss and an
FID embedding normally use. Weights are random (He-uniform, seeded) unless
loaded from a checkpoint file, and never receive gradients; gradients still
flow through to the input image.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import numerics as nx
from .errors import CheckpointError, ConfigError, ShapeError
from .numerics import Tensor

DEFAULT_CHANNELS = (3, 16, 32, 64, 64, 64)


@dataclass(frozen=True)
class FeatureExtractor:
    kernels: tuple[Tensor, ...]
    strides: tuple[int, ...]
    taps: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        if len(self.kernels) != len(self.strides) or not self.kernels:
            raise ConfigError("one stride per stage is required")
        if not self.taps or any(t < 0 or t >= len(self.kernels) for t in self.taps):
            raise ConfigError(f"tap indices {self.taps} out of range")
        if self.kernels[0].shape[1] != 3:
            raise ConfigError("the first stage must take 3 channels")

    @classmethod
    def default(cls, seed: int = 0, channels=DEFAULT_CHANNELS, taps=None) -> "FeatureExtractor":
        rng = np.random.default_rng(seed)
        kernels = []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            bound = np.sqrt(6.0 / (c_in * 9))
            kernels.append(Tensor(rng.uniform(-bound, bound, (c_out, c_in, 3, 3))))
        strides = (1,) + (2,) * (len(kernels) - 1)
        taps = tuple(range(len(kernels))) if taps is None else tuple(taps)
        return cls(tuple(kernels), strides, taps, seed)

    @property
    def out_channels(self) -> int:
        return self.kernels[-1].shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, s in zip(self.kernels, self.strides):
            h.update(np.ascontiguousarray(k.data).tobytes())
            h.update(bytes([s]))
        h.update(bytes(self.taps))
        return h.hexdigest()[:16]

    def stages(self, x: Tensor) -> list[Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"feature extractor expects N,3,H,W, got {x.shape}")
        outs = []
        for k, s in zip(self.kernels, self.strides):
            x = nx.relu(nx.conv2d(x, k, stride=s, padding=1))
            outs.append(x)
        return outs

    def features(self, x: Tensor) -> list[Tensor]:
        """Activations at the tap stages, in tap order."""
        outs = self.stages(x)
        return [outs[t] for t in self.taps]

    def tap_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        shapes = []
        for k, s in zip(self.kernels, self.strides):
            h = nx.conv_output_size(h, 3, s, 1)
            w = nx.conv_output_size(w, 3, s, 1)
            shapes.append((k.shape[0], h, w))
        return [shapes[t] for t in self.taps]

    def embed(self, x: Tensor) -> np.ndarray:
        """Global-average-pooled final stage: one row per image."""
        return nx.global_avg_pool(self.stages(x)[-1]).data[:, :, 0, 0]

    def save(self, path) -> None:
        tensors = {f"stage{i}.w": k.data for i, k in enumerate(self.kernels)}
        config = {"kind": "feature_pyramid", "strides": list(self.strides), "taps": list(self.taps)}
        checkpoint.save(path, checkpoint.Checkpoint(self.fingerprint(), config, tensors), "float64")

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        """Load external weights stored in the checkpoint format."""
        ckpt = checkpoint.load(path)
        if ckpt.config.get("kind") != "feature_pyramid":
            raise CheckpointError(f"{path}: not a feature extractor checkpoint")
        strides = tuple(ckpt.config["strides"])
        kernels = tuple(Tensor(ckpt.tensors[f"stage{i}.w"]) for i in range(len(strides)))
        fx = cls(kernels, strides, tuple(ckpt.config["taps"]))
        if fx.fingerprint() != ckpt.fingerprint:
            raise CheckpointError(f"{path}: feature extractor fingerprint mismatch")
        return fx
