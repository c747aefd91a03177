"""Evaluation metrics: PSNR, SSIM, UIQM and Frechet distance on extractor features.

Images are H,W,3 float arrays in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import NumericError, ShapeError
from .features import FeatureExtractor
from .numerics import Tensor

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# UIQM, original published definition (0..255 intensities)
UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_TRIM = 0.1
UIQM_BLOCK = 8
PLIP_GAMMA = 1026.0

FID_EPS = 1e-6


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    """10 log10(1 / MSE) in dB; identical images give ``cap``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected H,W,3 image, got {img.shape}")
    return img @ LUMA


def _ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.tensordot(sliding_window_view(x, win.shape), win, axes=([2, 3], [0, 1]))


def ssim(a, b) -> float:
    """Single-scale SSIM on Rec.601 luma, mean over valid window positions."""
    a, b = _pair(a, b)
    x, y = luma(a), luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs both sides >= {SSIM_WINDOW}, got {x.shape}")
    win = _ssim_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


# -- UIQM ---------------------------------------------------------------------

def _trimmed_stats(values: np.ndarray, alpha: float = UICM_TRIM) -> tuple[float, float]:
    """Alpha-trimmed mean and the variance about it."""
    v = np.sort(values.ravel())
    k = v.size
    lo, hi = math.ceil(alpha * k), math.floor(alpha * k)
    core = v[lo:k - hi]
    mu = float(core.mean())
    return mu, float(np.mean((v - mu) ** 2))


def uicm(img255: np.ndarray) -> float:
    r, g, b = img255[..., 0], img255[..., 1], img255[..., 2]
    mu_rg, var_rg = _trimmed_stats(r - g)
    mu_yb, var_yb = _trimmed_stats((r + g) / 2 - b)
    return -0.0268 * math.sqrt(mu_rg ** 2 + mu_yb ** 2) + 0.1586 * math.sqrt(var_rg + var_yb)


def _blocks(x: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping size x size blocks of the top-left region, as k1*k2, size, size[, c]."""
    size = min(size, x.shape[0], x.shape[1])
    k1, k2 = x.shape[0] // size, x.shape[1] // size
    x = x[:k1 * size, :k2 * size]
    tail = x.shape[2:]
    b = x.reshape((k1, size, k2, size) + tail).swapaxes(1, 2)
    return b.reshape((k1 * k2, size, size) + tail)


def eme(x: np.ndarray, size: int = UIQM_BLOCK) -> float:
    """2/(k1 k2) * sum of log(max/min) over blocks; blocks with a zero extreme add 0."""
    blocks = _blocks(x, size)
    hi = blocks.reshape(len(blocks), -1).max(axis=1)
    lo = blocks.reshape(len(blocks), -1).min(axis=1)
    ok = (lo > 0) & (hi > 0)
    return 2.0 / len(blocks) * float(np.sum(np.log(hi[ok] / lo[ok])))


def sobel_magnitude(x: np.ndarray) -> np.ndarray:
    return np.hypot(ndimage.sobel(x, axis=0), ndimage.sobel(x, axis=1))


def uism(img255: np.ndarray) -> float:
    return sum(lam * eme(img255[..., c] * sobel_magnitude(img255[..., c]))
               for c, lam in enumerate(LUMA))


def uiconm(img255: np.ndarray, size: int = UIQM_BLOCK) -> float:
    """Block logAMEE with PLIP difference and sum (gamma = k = 1026)."""
    blocks = _blocks(img255, size)
    flat = blocks.reshape(len(blocks), -1)
    hi, lo = flat.max(axis=1), flat.min(axis=1)
    diff = PLIP_GAMMA * (hi - lo) / (PLIP_GAMMA - lo)
    total = hi + lo - hi * lo / PLIP_GAMMA
    ok = (diff > 0) & (total > 0)
    ratio = diff[ok] / total[ok]
    return -float(np.sum(ratio * np.log(ratio))) / len(blocks)


def uiqm(img) -> tuple[float, float, float, float]:
    """Returns (uiqm, uicm, uism, uiconm)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected H,W,3 image, got {img.shape}")
    x = img * 255.0
    c, s, k = uicm(x), uism(x), uiconm(x)
    c1, c2, c3 = UIQM_COEFFS
    return c1 * c + c2 * s + c3 * k, c, s, k


# -- FID ----------------------------------------------------------------------

def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def fid(set_a, set_b, eps: float = FID_EPS) -> float:
    """Frechet distance between Gaussians fitted to two feature matrices (rows = samples)."""
    a = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False, bias=True).reshape(d, d) + eps * np.eye(d)
    cov_b = np.cov(b, rowvar=False, bias=True).reshape(d, d) + eps * np.eye(d)
    if eps == 0:
        for name, cov in (("a", cov_a), ("b", cov_b)):
            if np.linalg.matrix_rank(cov) < d:
                raise NumericError(f"covariance of set {name} is singular; use eps > 0")
    # (cov_a cov_b)^{1/2} has the same trace as (S cov_b S)^{1/2} with S = cov_a^{1/2}
    s = _sqrtm_psd(cov_a)
    cross = np.trace(_sqrtm_psd(s @ cov_b @ s))
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2 * cross)
    return max(value, 0.0)


def embed_for_fid(images: Sequence, fx: FeatureExtractor) -> np.ndarray:
    """One row per image: the extractor's pooled final stage."""
    rows = []
    for img in images:
        x = np.transpose(np.asarray(img, dtype=np.float64), (2, 0, 1))[None]
        rows.append(fx.embed(Tensor(x))[0])
    return np.stack(rows) if rows else np.zeros((0, fx.out_channels))


# -- reports ------------------------------------------------------------------

@dataclass
class ImageRecord:
    id: str
    psnr: float | None = None
    ssim: float | None = None
    uiqm: float | None = None
    uicm: float | None = None
    uism: float | None = None
    uiconm: float | None = None


@dataclass
class MetricReport:
    records: list[ImageRecord] = field(default_factory=list)
    fid: float | None = None
    embedding: str | None = None
    corpus: dict = field(default_factory=dict)

    def means(self) -> dict[str, float]:
        out = {}
        for key in ("psnr", "ssim", "uiqm", "uicm", "uism", "uiconm"):
            vals = [getattr(r, key) for r in self.records if getattr(r, key) is not None]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records], "mean": self.means(),
                "fid": self.fid, "embedding": self.embedding, "corpus": self.corpus}

    def table(self, label: str = "method") -> str:
        """Plain-text summary: one row, columns PSNR SSIM UIQM FID."""
        m = self.means()
        fmt = lambda v, p: "-" if v is None else f"{v:.{p}f}"
        header = f"{'Method':<16}{'PSNR':>10}{'SSIM':>10}{'UIQM':>10}{'FID':>10}"
        row = (f"{label:<16}{fmt(m.get('psnr'), 2):>10}{fmt(m.get('ssim'), 4):>10}"
               f"{fmt(m.get('uiqm'), 4):>10}{fmt(self.fid, 2):>10}")
        lines = [header, row]
        if self.embedding:
            lines.append(f"FID embedding: {self.embedding}")
        return "\n".join(lines)


def evaluate_pair(id_: str, pred, ref=None) -> ImageRecord:
    rec = ImageRecord(id_)
    if ref is not None:
        rec.psnr, rec.ssim = psnr(pred, ref), ssim(pred, ref)
    rec.uiqm, rec.uicm, rec.uism, rec.uiconm = uiqm(pred)
    return rec
