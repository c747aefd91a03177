"""MHB-Unet: a U-Net whose blocks fuse 1x1 / 3x3 branches with attention.

Parameters live in a flat ``dict[str, Tensor]`` keyed by canonical dotted
names. Which sub-layers exist is decided by :class:`NetworkConfig`, and the
forward pass follows whatever parameters are present, so ablated variants
(no spatial attention, no channel attention, no multi-branch convolution)
are just different parameter sets.

Layout for ``depth_levels = L`` and widths ``w_i = base * 2**i``::

    stem      3x3 conv 7 -> w_0, ReLU
    enc{i}    mhb(w_i); 3x3 stride-2 conv w_i -> w_{i+1}, ReLU
    bott      mhb(w_L)
    dec{i}    2x nearest upsample; 3x3 conv w_{i+1} -> w_i, ReLU;
              concat skip enc{i}; 1x1 conv 2 w_i -> w_i; mhb(w_i)
    head      3x3 conv w_0 -> 3, sigmoid
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ShapeError
from .lightfield import LightFieldMap
from .numerics import Tensor
from .physics import as_depth

Params = dict[str, Tensor]

INPUT_CHANNELS = 7
OUTPUT_CHANNELS = 3


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 16
    depth_levels: int = 3
    input_channels: int = INPUT_CHANNELS
    output_channels: int = OUTPUT_CHANNELS
    seed: int = 0
    reduction: int = 4
    sa_kernel: int = 7
    use_sa: bool = True
    use_ca: bool = True
    use_mhc: bool = True

    def __post_init__(self):
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.depth_levels < 1:
            raise ConfigError(f"depth_levels must be >= 1, got {self.depth_levels}")
        if self.input_channels != INPUT_CHANNELS or self.output_channels != OUTPUT_CHANNELS:
            raise ConfigError("input/output channels are fixed at 7 and 3")
        if self.reduction < 1 or self.base_channels < self.reduction:
            raise ConfigError(
                f"channel attention needs channels >= reduction ({self.reduction})")
        if self.sa_kernel < 1 or self.sa_kernel % 2 == 0:
            raise ConfigError(f"sa_kernel must be odd, got {self.sa_kernel}")

    def architecture(self) -> dict:
        """Every field that shapes the parameter set (the seed does not)."""
        d = asdict(self)
        d.pop("seed")
        return d

    def fingerprint(self) -> str:
        blob = json.dumps({"kind": "mhb_unet", **self.architecture()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def multiple(self) -> int:
        """Spatial sizes must be divisible by this."""
        return 2 ** self.depth_levels

    def width(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


# -- parameter layout ---------------------------------------------------------

def _conv(name: str, c_in: int, c_out: int, k: int) -> Iterator[tuple[str, tuple, int]]:
    yield f"{name}.w", (c_out, c_in, k, k), c_in * k * k
    yield f"{name}.b", (c_out,), 0


def _mhb_layout(prefix: str, c: int, cfg: NetworkConfig):
    if cfg.use_mhc:
        yield from _conv(f"{prefix}.b1", c, c, 1)
        yield from _conv(f"{prefix}.b2", c, c, 3)
        yield from _conv(f"{prefix}.b3a", c, c, 1)
        yield from _conv(f"{prefix}.b3b", c, c, 3)
        yield from _conv(f"{prefix}.fuse", 3 * c, c, 1)
    else:
        yield from _conv(f"{prefix}.conv", c, c, 3)
    if cfg.use_ca:
        hidden = c // cfg.reduction
        yield from _conv(f"{prefix}.ca1", c, hidden, 1)
        yield from _conv(f"{prefix}.ca2", hidden, c, 1)
    if cfg.use_sa:
        yield from _conv(f"{prefix}.sa", 2, 1, cfg.sa_kernel)


def param_layout(cfg: NetworkConfig) -> list[tuple[str, tuple, int]]:
    """Canonical (name, shape, fan_in) list; fan_in 0 marks a bias."""
    out = list(_conv("stem", cfg.input_channels, cfg.width(0), 3))
    for i in range(cfg.depth_levels):
        out += _mhb_layout(f"enc{i}.mhb", cfg.width(i), cfg)
        out += _conv(f"enc{i}.down", cfg.width(i), cfg.width(i + 1), 3)
    out += _mhb_layout("bott.mhb", cfg.width(cfg.depth_levels), cfg)
    for i in reversed(range(cfg.depth_levels)):
        out += _conv(f"dec{i}.up", cfg.width(i + 1), cfg.width(i), 3)
        out += _conv(f"dec{i}.fuse", 2 * cfg.width(i), cfg.width(i), 1)
        out += _mhb_layout(f"dec{i}.mhb", cfg.width(i), cfg)
    out += _conv("head", cfg.width(0), cfg.output_channels, 3)
    return out


def he_uniform_bound(fan_in: int) -> np.float32:
    """sqrt(6 / fan_in), rounded down to a float32 value."""
    b = np.sqrt(6.0 / fan_in)
    b32 = np.float32(b)
    if float(b32) > b:
        b32 = np.nextafter(b32, np.float32(0))
    return b32


def init_params(cfg: NetworkConfig) -> Params:
    """He-uniform kernels and zero biases, drawn in layout order from ``cfg.seed``.

    Values are float32-representable so that float32 checkpoints round-trip
    exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    params: Params = {}
    for name, shape, fan_in in param_layout(cfg):
        if fan_in == 0:
            values = np.zeros(shape)
        else:
            bound = float(he_uniform_bound(fan_in))
            values = (rng.uniform(-1.0, 1.0, shape) * bound).astype(np.float32).astype(np.float64)
        params[name] = Tensor(values, name=name)
    return params


def count_params(params: Mapping[str, Tensor]) -> int:
    return int(sum(p.size for p in params.values()))


# -- blocks --------------------------------------------------------------------

def _sub(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def _conv_apply(x, params, name, padding=0, stride=1):
    w = params[f"{name}.w"]
    return nx.conv2d(x, w, params[f"{name}.b"], stride=stride, padding=padding)


def channel_attention(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Squeeze (global average), excite (two 1x1 convs), sigmoid gate per channel."""
    c = x.shape[1]
    hidden = params["ca1.w"].shape[0]
    if params["ca1.w"].shape[1] != c:
        raise ShapeError(f"channel attention built for {params['ca1.w'].shape[1]} channels, got {c}")
    if hidden < 1:
        raise ConfigError(f"channel count {c} smaller than the reduction ratio")
    gate = channel_gate(x, params)
    return nx.mul(x, gate)


def channel_gate(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    s = nx.global_avg_pool(x)
    s = nx.relu(_conv_apply(s, params, "ca1"))
    return nx.sigmoid(_conv_apply(s, params, "ca2"))


def spatial_gate(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    k = params["sa.w"].shape[-1]
    if x.shape[2] < k or x.shape[3] < k:
        raise ConfigError(
            f"spatial attention needs H,W >= {k}, got {x.shape[2]}x{x.shape[3]}")
    stats = nx.concat([nx.mean(x, axis=1, keepdims=True), nx.amax(x, axis=1, keepdims=True)], axis=1)
    return nx.sigmoid(_conv_apply(stats, params, "sa", padding=k // 2))


def spatial_attention(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Channel mean and max maps -> k x k conv -> sigmoid gate per pixel."""
    return nx.mul(x, spatial_gate(x, params))


def mhb_block(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Multi-branch hybrid block.

    Branches 1x1 | 3x3 | 1x1->3x3 are concatenated and fused back to C
    channels, gated by channel then spatial attention, and added to the input.
    Without the branch parameters (``conv.*`` present instead) the block is a
    single 3x3 conv with the same gates and no residual.
    """
    c = x.shape[1]
    if "conv.w" in params:
        if params["conv.w"].shape[1] != c:
            raise ShapeError(f"block built for {params['conv.w'].shape[1]} channels, got {c}")
        y = nx.relu(_conv_apply(x, params, "conv", padding=1))
        residual = False
    else:
        if params["b1.w"].shape[1] != c:
            raise ShapeError(f"block built for {params['b1.w'].shape[1]} channels, got {c}")
        b1 = nx.relu(_conv_apply(x, params, "b1"))
        b2 = nx.relu(_conv_apply(x, params, "b2", padding=1))
        b3 = nx.relu(_conv_apply(nx.relu(_conv_apply(x, params, "b3a")), params, "b3b", padding=1))
        y = _conv_apply(nx.concat([b1, b2, b3], axis=1), params, "fuse")
        residual = True
    if "ca1.w" in params:
        y = channel_attention(y, params)
    if "sa.w" in params:
        y = spatial_attention(y, params)
    return nx.add(x, y) if residual else y


def padding_hint(h: int, w: int, multiple: int) -> tuple[int, int]:
    return (-h) % multiple, (-w) % multiple


def forward(params: Mapping[str, Tensor], cfg: NetworkConfig, x: Tensor) -> Tensor:
    """Run the network on an N,7,H,W tensor; returns N,3,H,W in (0, 1)."""
    if x.ndim != 4 or x.shape[1] != cfg.input_channels:
        raise ShapeError(f"expected N,{cfg.input_channels},H,W input, got {x.shape}")
    h, w = x.shape[2:]
    ph, pw = padding_hint(h, w, cfg.multiple)
    if ph or pw:
        raise ShapeError(
            f"H,W = {h}x{w} not divisible by {cfg.multiple}; pad by ({ph}, {pw}) "
            f"to {h + ph}x{w + pw} (the render command's --pad does this)")

    y = nx.relu(_conv_apply(x, params, "stem", padding=1))
    skips = []
    for i in range(cfg.depth_levels):
        y = mhb_block(y, _sub(params, f"enc{i}.mhb"))
        skips.append(y)
        y = nx.relu(_conv_apply(y, params, f"enc{i}.down", padding=1, stride=2))
    y = mhb_block(y, _sub(params, "bott.mhb"))
    for i in reversed(range(cfg.depth_levels)):
        y = nx.relu(_conv_apply(nx.upsample_nearest2x(y), params, f"dec{i}.up", padding=1))
        y = _conv_apply(nx.concat([y, skips[i]], axis=1), params, f"dec{i}.fuse")
        y = mhb_block(y, _sub(params, f"dec{i}.mhb"))
    return nx.sigmoid(_conv_apply(y, params, "head", padding=1))


# -- image-level entry point ---------------------------------------------------

def normalize_depth(depth) -> np.ndarray:
    d = as_depth(depth)
    top = d.max()
    return d / top if top > 0 else d


def network_input(clean, depth, lf) -> np.ndarray:
    """Stack clean (3), max-normalised depth (1) and light field (3) into 7,H,W."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ShapeError(f"clean image must be H x W x 3, got {clean.shape}")
    planes = lf.planes if isinstance(lf, LightFieldMap) else np.asarray(lf, dtype=np.float64)
    d = normalize_depth(depth)
    hw = clean.shape[:2]
    if d.shape != hw or planes.shape != (3,) + hw:
        raise ShapeError(
            f"inputs disagree on size: clean {clean.shape}, depth {d.shape}, light field {planes.shape}")
    return np.concatenate([np.transpose(clean, (2, 0, 1)), d[None], planes], axis=0)


@dataclass
class Model:
    config: NetworkConfig
    params: Params = field(default_factory=dict)

    @classmethod
    def initialise(cls, cfg: NetworkConfig) -> "Model":
        return cls(cfg, init_params(cfg))

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self.params, self.config, x)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def unet_forward(clean, depth, lf, model: Model) -> np.ndarray:
    """Render one H,W,3 image; all three inputs must share H x W."""
    x = network_input(clean, depth, lf)
    out = forward(model.params, model.config, Tensor._wrap(x[None]))
    return np.transpose(out.data[0], (1, 2, 0))
