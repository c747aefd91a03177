"""Image and depth I/O, JSONL manifests, augmentation and patch sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

from .checkpoint import atomic_write
from .errors import ConfigError, ImageIOError, ShapeError
from .physics import as_depth

IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
DEPTH_EXTS = IMAGE_EXTS + (".npy",)


# -- images -------------------------------------------------------------------

def _read_raw(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    buf = np.fromfile(str(path), dtype=np.uint8)
    img = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED) if buf.size else None
    if img is None:
        raise ImageIOError(f"{path}: unreadable or truncated image")
    return img


def _to_unit(img: np.ndarray, path) -> np.ndarray:
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    raise ImageIOError(f"{path}: unsupported sample type {img.dtype}")


def load_image(path) -> np.ndarray:
    """H,W,3 float64 RGB in [0, 1]; gray is replicated, alpha dropped."""
    img = _read_raw(path)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] == 4:
        img = cv2.cvtColor(img, cv2.COLOR_BGRA2RGB)
    elif img.shape[2] == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    else:
        raise ImageIOError(f"{path}: unsupported channel count {img.shape[2]}")
    return _to_unit(img, path)


def encode_image(img, ext: str = ".png", bits: int = 8) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected H,W,3 image, got {img.shape}")
    if bits not in (8, 16):
        raise ConfigError(f"bit depth must be 8 or 16, got {bits}")
    top = 255 if bits == 8 else 65535
    codes = np.rint(np.clip(img, 0.0, 1.0) * top).astype(np.uint8 if bits == 8 else np.uint16)
    ok, buf = cv2.imencode(ext, cv2.cvtColor(codes, cv2.COLOR_RGB2BGR))
    if not ok:
        raise ImageIOError(f"cannot encode image as {ext}")
    return buf.tobytes()


def save_image(path, img, bits: int = 8) -> None:
    """Write an H,W,3 [0, 1] image atomically; format from the extension."""
    path = Path(path)
    try:
        atomic_write(path, encode_image(img, path.suffix.lower() or ".png", bits))
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write ({exc})") from None


# -- depth --------------------------------------------------------------------

def load_depth(path) -> np.ndarray:
    """H,W depth from a .npy array or the first channel of an image."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        try:
            arr = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise ImageIOError(f"{path}: cannot read depth ({exc})") from None
        return as_depth(np.asarray(arr, dtype=np.float64))
    return as_depth(load_image(path)[..., 0])


def synthetic_depth(h: int, w: int, kind: str = "vertical-gradient") -> np.ndarray:
    """Depth growing linearly from 0 (top row) to 1 (bottom row)."""
    if kind != "vertical-gradient":
        raise ConfigError(f"unknown synthetic depth {kind!r}")
    col = np.linspace(0.0, 1.0, h) if h > 1 else np.zeros(1)
    return np.repeat(col[:, None], w, axis=1)


# -- pairs and manifests -----------------------------------------------------------

@dataclass(frozen=True)
class DatasetPair:
    id: str
    underwater: np.ndarray
    reference: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        h, w = self.reference.shape[:2]
        if self.underwater.shape != (h, w, 3) or self.reference.shape != (h, w, 3):
            raise ShapeError(f"pair {self.id}: image shapes {self.underwater.shape} "
                             f"and {self.reference.shape} differ")
        if self.depth.shape != (h, w):
            raise ShapeError(f"pair {self.id}: depth {self.depth.shape} does not match {h}x{w}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.reference.shape[:2]


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    uw: str
    ref: str
    depth: str | None = None
    split: str = "train"


def _resolve(root: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else root / q


def load_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    """Records in file order; relative paths are resolved against the manifest's folder."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read manifest ({exc.strerror})") from None
    root = path.parent
    records, seen = [], set()
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            rec = ManifestRecord(str(raw["id"]), str(raw["uw"]), str(raw["ref"]),
                                 raw.get("depth"), raw.get("split", "train"))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}:{n}: bad manifest record ({exc})") from None
        if rec.id in seen:
            raise ConfigError(f"{path}:{n}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        rec = replace(rec, uw=str(_resolve(root, rec.uw)), ref=str(_resolve(root, rec.ref)),
                      depth=None if rec.depth is None else str(_resolve(root, rec.depth)))
        if check_files:
            for p in (rec.uw, rec.ref, rec.depth):
                if p is not None and not Path(p).is_file():
                    raise ImageIOError(f"{path}:{n}: record {rec.id}: missing file {p}")
        records.append(rec)
    return records


def save_manifest(path, records: Iterable[ManifestRecord], relative_to=None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent

    def rel(p):
        if p is None:
            return None
        try:
            return str(Path(p).resolve().relative_to(base.resolve()))
        except ValueError:
            return str(p)

    lines = [json.dumps({"id": r.id, "uw": rel(r.uw), "ref": rel(r.ref), "depth": rel(r.depth),
                         "split": r.split}) for r in records]
    atomic_write(path, ("\n".join(lines) + "\n").encode() if lines else b"")


def _by_stem(folder: Path, exts) -> dict[str, Path]:
    if not folder.is_dir():
        return {}
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in exts}


def make_manifest(root, split: str = "train") -> list[ManifestRecord]:
    """Pair ``uw/<stem>.*`` with ``ref/<stem>.*`` and optional ``depth/<stem>.*``."""
    root = Path(root)
    uw, ref = _by_stem(root / "uw", IMAGE_EXTS), _by_stem(root / "ref", IMAGE_EXTS)
    depth = _by_stem(root / "depth", DEPTH_EXTS)
    if not uw:
        raise ConfigError(f"{root}: no images under uw/")
    missing = sorted(set(uw) - set(ref))
    if missing:
        raise ConfigError(f"{root}: no reference image for {missing[:3]}")
    return [ManifestRecord(stem, str(uw[stem]), str(ref[stem]),
                           str(depth[stem]) if stem in depth else None, split)
            for stem in sorted(uw)]


def load_pair(rec: ManifestRecord, synthetic: str | None = None) -> DatasetPair:
    """Load one record; ``synthetic`` names a fallback depth used when the record has none."""
    try:
        uw, ref = load_image(rec.uw), load_image(rec.ref)
    except ImageIOError as exc:
        raise ImageIOError(f"record {rec.id}: {exc}") from None
    if rec.depth is not None:
        depth = load_depth(rec.depth)
    elif synthetic is not None:
        depth = synthetic_depth(*ref.shape[:2], kind=synthetic)
    else:
        raise ConfigError(f"record {rec.id}: no depth map and no synthetic fallback")
    return DatasetPair(rec.id, uw, ref, depth)


# -- augmentation -------------------------------------------------------------

def transform(pair: DatasetPair, k: int, flip: bool) -> DatasetPair:
    """Rotate by k*90 degrees counter-clockwise, then optionally mirror left-right."""
    def apply(a):
        a = np.rot90(a, k, axes=(0, 1))
        return np.ascontiguousarray(a[:, ::-1] if flip else a)
    return DatasetPair(pair.id, apply(pair.underwater), apply(pair.reference), apply(pair.depth))


def augment(pair: DatasetPair, rng: np.random.Generator) -> DatasetPair:
    k = int(rng.integers(4))
    flip = bool(rng.random() < 0.5)
    return transform(pair, k, flip)


def crop(pair: DatasetPair, top: int, left: int, size: int) -> DatasetPair:
    s = np.s_[top:top + size, left:left + size]
    return DatasetPair(pair.id, pair.underwater[s].copy(), pair.reference[s].copy(),
                       pair.depth[s].copy())


def sample_patch(pair: DatasetPair, size: int, rng: np.random.Generator,
                 policy: str = "reject") -> DatasetPair:
    """Random aligned size x size crop; smaller pairs are rejected or upscaled per ``policy``."""
    h, w = pair.shape
    if h < size or w < size:
        if policy == "reject":
            raise ShapeError(f"pair {pair.id}: {h}x{w} is smaller than patch {size}")
        if policy != "resize":
            raise ConfigError(f"unknown small-image policy {policy!r}")
        f = size / min(h, w)
        nh, nw = max(size, round(h * f)), max(size, round(w * f))
        rs = lambda a: cv2.resize(a, (nw, nh), interpolation=cv2.INTER_LINEAR)
        pair = DatasetPair(pair.id, rs(pair.underwater), rs(pair.reference), rs(pair.depth))
        h, w = nh, nw
    top = int(rng.integers(h - size + 1))
    left = int(rng.integers(w - size + 1))
    return crop(pair, top, left, size)
