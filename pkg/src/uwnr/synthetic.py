"""Small procedural datasets for smoke runs and tests.

Clean scenes are smooth random textures; their underwater counterparts are
rendered with the physical scattering model under one of two water types
(green or blue), so the light field of an exemplar carries its water colour.
"""
from __future__ import annotations

import numpy as np

from .data import DatasetPair
from .physics import render_physical, transmission_from_depth

# (beta per channel, background light)
WATER_TYPES = {
    "green": ((1.2, 0.3, 0.7), (0.1, 0.7, 0.35)),
    "blue": ((1.4, 0.7, 0.25), (0.05, 0.35, 0.75)),
}


def smooth_texture(h: int, w: int, rng: np.random.Generator, terms: int = 4) -> np.ndarray:
    """H,W,3 sum of random low-frequency sinusoids, rescaled into [0.05, 0.95]."""
    ii, jj = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(terms):
            fy, fx = rng.uniform(0.5, 3.0, 2)
            phase = rng.uniform(0, 2 * np.pi)
            img[..., c] += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * (fy * ii + fx * jj) + phase)
    lo, hi = img.min(axis=(0, 1)), img.max(axis=(0, 1))
    return 0.05 + 0.9 * (img - lo) / np.where(hi > lo, hi - lo, 1.0)


def scene_depth(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Depth in metres: a tilted plane plus a gentle bump, between about 0.5 and 3."""
    ii, jj = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    a, b = rng.uniform(0.5, 1.5, 2)
    cy, cx = rng.uniform(0.2, 0.8, 2)
    bump = 0.5 * np.exp(-((ii - cy) ** 2 + (jj - cx) ** 2) / 0.05)
    return 0.5 + a * ii + b * jj * 0.5 + bump


def render_water(idx: int, clean: np.ndarray, depth: np.ndarray, water: str) -> DatasetPair:
    beta, background = WATER_TYPES[water]
    uw = render_physical(clean, transmission_from_depth(depth, beta), background)
    return DatasetPair(f"synth{idx:03d}_{water}", uw, clean, depth)


def smoke_pairs(n: int = 8, size: int = 32, seed: int = 0) -> list[DatasetPair]:
    """``n`` pairs: each clean scene appears once per water type, so only the
    conditioning map tells the two targets apart."""
    rng = np.random.default_rng(seed)
    names = sorted(WATER_TYPES)
    pairs: list[DatasetPair] = []
    for scene in range(-(-n // len(names))):
        clean, depth = smooth_texture(size, size, rng), scene_depth(size, size, rng)
        pairs.extend(render_water(scene, clean, depth, w) for w in names)
    return pairs[:n]
