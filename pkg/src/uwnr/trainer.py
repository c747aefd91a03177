"""Adam training loop with a step-then-linear-decay schedule, checkpoints,
bit-exact resume and ablation switches."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import numerics as nx
from .checkpoint import atomic_write, load_model, save_model
from .data import DatasetPair, augment, load_manifest, load_pair, sample_patch
from .errors import ConfigError, NumericError, ShapeError
from .features import FeatureExtractor
from .lightfield import DEFAULT_SIGMAS, extract_light_field
from .losses import TERMS, LossWeights, total_loss
from .network import Model, NetworkConfig, network_input
from .numerics import Tensor
from .physics import DEFAULT_UDC_WINDOW, dcp_background_light

ABLATIONS = ("disable_rec", "disable_per", "disable_udc", "disable_lfc",
             "disable_sa", "disable_ca", "disable_mhc", "replace_lfr_with_dcp")
COMPONENTS = TERMS + ("sa", "ca", "mhc", "lfr")
LFC_TARGETS = ("lightfield_map", "exemplar")
LOG_FIELDS = ("step", "epoch", "lr", "total") + TERMS

# fields that may change between a run and its resumption
_RESUMABLE = ("max_steps", "checkpoint_every")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr0: float = 2e-4
    decay_start: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    patch_size: int | None = 64
    patch_policy: str = "reject"
    augment: bool = True
    weights: dict = field(default_factory=lambda: {t: 1.0 for t in TERMS})
    seed: int = 0
    base_channels: int = 16
    depth_levels: int = 3
    reduction: int = 4
    sa_kernel: int = 7
    sigmas: tuple = DEFAULT_SIGMAS
    udc_window: int = DEFAULT_UDC_WINDOW
    lfc_target: str = "lightfield_map"
    fx_seed: int = 0
    fx_path: str | None = None
    synthetic_depth: str | None = None
    grad_clip: float | None = None
    checkpoint_every: int = 0
    max_steps: int | None = None
    disable_rec: bool = False
    disable_per: bool = False
    disable_udc: bool = False
    disable_lfc: bool = False
    disable_sa: bool = False
    disable_ca: bool = False
    disable_mhc: bool = False
    replace_lfr_with_dcp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        extra = sorted(set(self.weights) - set(TERMS))
        if extra:
            raise ConfigError(f"unknown loss weight names {extra}; expected a subset of {TERMS}")
        object.__setattr__(self, "weights", {t: float(self.weights.get(t, 1.0)) for t in TERMS})
        if self.epochs < 1 or not 0 < self.decay_start <= self.epochs:
            raise ConfigError(f"need 0 < decay_start <= epochs, got {self.decay_start}, {self.epochs}")
        if not (self.lr0 > 0 and math.isfinite(self.lr0)):
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patch_size is not None and self.patch_size < 1:
            raise ConfigError("patch_size must be positive or null")
        if self.lfc_target not in LFC_TARGETS:
            raise ConfigError(f"lfc_target must be one of {LFC_TARGETS}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or null")
        if self.checkpoint_every < 0 or (self.max_steps is not None and self.max_steps < 0):
            raise ConfigError("checkpoint_every and max_steps must be >= 0")
        self.loss_weights()
        self.network()

    # -- derived settings -----------------------------------------------------

    def loss_weights(self) -> LossWeights:
        w = {t: 0.0 if getattr(self, f"disable_{t}") else self.weights[t] for t in TERMS}
        return LossWeights(**w)

    def network(self) -> NetworkConfig:
        return NetworkConfig(base_channels=self.base_channels, depth_levels=self.depth_levels,
                             seed=self.seed, reduction=self.reduction, sa_kernel=self.sa_kernel,
                             use_sa=not self.disable_sa, use_ca=not self.disable_ca,
                             use_mhc=not self.disable_mhc)

    def components(self) -> tuple[str, ...]:
        """Active loss terms and network parts; ``dcp`` stands in for ``lfr`` when replaced."""
        weights = self.loss_weights()
        out = [t for t in TERMS if getattr(weights, t) > 0]
        out += [c for c in ("sa", "ca", "mhc") if not getattr(self, f"disable_{c}")]
        out.append("dcp" if self.replace_lfr_with_dcp else "lfr")
        return tuple(out)

    # -- serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigmas"] = list(self.sigmas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def save(self, path) -> None:
        atomic_write(path, json.dumps(self.to_dict(), indent=2, sort_keys=True).encode())

    def digest(self) -> str:
        """Hash of every setting that affects the optimisation trajectory."""
        d = {k: v for k, v in self.to_dict().items() if k not in _RESUMABLE}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def lr_at(epoch: int, config: TrainConfig) -> float:
    """lr0 before ``decay_start``, then a straight line reaching 0 at ``epochs``."""
    if not 0 <= epoch < config.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.decay_start:
        return config.lr0
    return config.lr0 * (config.epochs - epoch) / (config.epochs - config.decay_start)


# -- Adam ------------------------------------------------------------------------

def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              moments: dict[str, np.ndarray], lr: float, config: TrainConfig, step: int) -> None:
    """Bias-corrected Adam update in place; ``step`` counts from 1.

    ``moments`` holds ``adam.m/<name>`` and ``adam.v/<name>``; missing entries start at zero.
    """
    if step < 1:
        raise ConfigError(f"Adam step counter must start at 1, got {step}")
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name} at step {step}")
    c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = b1 * moments.get("adam.m/" + name, 0.0) + (1 - b1) * g
        v = b2 * moments.get("adam.v/" + name, 0.0) + (1 - b2) * g * g
        moments["adam.m/" + name] = np.asarray(m, dtype=np.float64)
        moments["adam.v/" + name] = np.asarray(v, dtype=np.float64)
        p.assign(p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for name in grads:
            grads[name] = grads[name] * (max_norm / norm)
    return norm


# -- batches -----------------------------------------------------------------

def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def conditioning_map(uw: np.ndarray, config: TrainConfig) -> np.ndarray:
    """3,H,W map fed to the network: the light field map, or a DCP background-light constant."""
    if config.replace_lfr_with_dcp:
        bl = dcp_background_light(uw, config.udc_window)
        return np.broadcast_to(bl[:, None, None], (3,) + uw.shape[:2]).copy()
    return extract_light_field(uw, config.sigmas).planes


@dataclass
class Batch:
    inputs: np.ndarray     # N,7,H,W
    targets: np.ndarray    # N,3,H,W (the underwater images)
    lfc_ref: np.ndarray    # N,3,H,W
    ids: list[str]


def make_batch(pairs: Sequence[DatasetPair], indices, rng: np.random.Generator,
               config: TrainConfig) -> Batch:
    inputs, targets, refs, ids = [], [], [], []
    for i in indices:
        pair = pairs[int(i)]
        if config.augment:
            pair = augment(pair, rng)
        if config.patch_size is not None:
            pair = sample_patch(pair, config.patch_size, rng, config.patch_policy)
        cond = conditioning_map(pair.underwater, config)
        inputs.append(network_input(pair.reference, pair.depth, cond))
        uw = np.transpose(pair.underwater, (2, 0, 1))
        targets.append(uw)
        refs.append(uw if config.lfc_target == "exemplar" else cond)
        ids.append(pair.id)
    shapes = {t.shape for t in targets}
    if len(shapes) > 1:
        raise ShapeError(f"batch mixes image sizes {sorted(shapes)}; set patch_size")
    return Batch(np.stack(inputs), np.stack(targets), np.stack(refs), ids)


def batch_for_step(pairs, step: int, config: TrainConfig) -> tuple[int, Batch]:
    spe = steps_per_epoch(len(pairs), config.batch_size)
    epoch, b = divmod(step, spe)
    order = epoch_order(len(pairs), config.seed, epoch)
    idx = order[b * config.batch_size:(b + 1) * config.batch_size]
    rng = np.random.default_rng([config.seed, epoch, b, 1])
    return epoch, make_batch(pairs, idx, rng, config)


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    moments: dict[str, np.ndarray]
    log: list[dict]
    step: int
    components: tuple[str, ...]
    checkpoints: list[Path] = field(default_factory=list)


def total_steps(n_pairs: int, config: TrainConfig) -> int:
    full = config.epochs * steps_per_epoch(n_pairs, config.batch_size)
    return full if config.max_steps is None else min(full, config.max_steps)


def _feature_extractor(config: TrainConfig) -> FeatureExtractor:
    if config.fx_path:
        return FeatureExtractor.load(config.fx_path)
    return FeatureExtractor.default(seed=config.fx_seed)


def train_step(model: Model, moments: dict, batch: Batch, lr: float, step: int,
               config: TrainConfig, fx: FeatureExtractor | None) -> tuple[float, dict]:
    """One forward/backward/Adam update; ``step`` is 1-based. Returns (total, breakdown)."""
    for p in model.params.values():
        p.requires_grad = True
        p.zero_grad()
    with nx.Tape() as tape:
        pred = model(Tensor(batch.inputs))
        loss, parts = total_loss(pred, Tensor(batch.targets), batch.lfc_ref, config.loss_weights(),
                                 fx, config.udc_window, config.sigmas)
    total = loss.item()
    if not math.isfinite(total):
        tape.reset()
        raise NumericError(f"loss became non-finite at step {step}")
    nx.backward(tape, loss)
    grads = {name: p.grad if p.grad is not None else np.zeros(p.shape)
             for name, p in model.params.items()}
    if config.grad_clip is not None:
        clip_gradients(grads, config.grad_clip)
    adam_step(model.params, grads, moments, lr, config, step)
    return total, parts


def write_log(path, rows: Sequence[dict]) -> None:
    lines = [",".join(LOG_FIELDS)]
    for r in rows:
        lines.append(",".join("" if r.get(k) is None else repr(r[k]) for k in LOG_FIELDS))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({k: (int(v) if k in ("step", "epoch") else float(v)) if v != "" else None
                         for k, v in r.items()})
        return rows


def run_metadata(config: TrainConfig, n_pairs: int, fx: FeatureExtractor | None,
                 resumed_from: str | None) -> dict:
    return {"seed": config.seed, "config_hash": config.digest(), "code_version": __version__,
            "network_fingerprint": config.network().fingerprint(),
            "feature_extractor": None if fx is None else fx.fingerprint(),
            "components": list(config.components()), "pairs": n_pairs,
            "total_steps": total_steps(n_pairs, config), "resumed_from": resumed_from,
            "config": config.to_dict()}


def save_snapshot(path, model: Model, moments: dict, step: int, log: list[dict],
                  config: TrainConfig) -> Path:
    meta = {"step": step, "config_hash": config.digest(), "log": log,
            "conditioning": {"sigmas": list(config.sigmas), "dcp": config.replace_lfr_with_dcp,
                             "udc_window": config.udc_window}}
    save_model(path, model, moments, meta, dtype="float64")
    return Path(path)


def train(pairs: Sequence[DatasetPair], config: TrainConfig, out_dir=None, resume=None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on in-memory pairs; see ``train_from_manifest`` for the file-based entry.

    With ``out_dir`` set, writes ``run.json``, ``loss_log.csv``, ``step_<n>.uwnr``
    every ``checkpoint_every`` steps and ``final.uwnr``. ``resume`` is a snapshot
    path; the continued run is bitwise identical to an uninterrupted one.
    """
    if not pairs:
        raise ConfigError("training needs at least one pair")
    weights = config.loss_weights()
    fx = _feature_extractor(config) if weights.per > 0 else None
    net_cfg = config.network()
    out = Path(out_dir) if out_dir is not None else None

    if resume is not None:
        model, moments, meta = load_model(resume, expected=net_cfg)
        if meta.get("config_hash") != config.digest():
            raise ConfigError(f"{resume}: snapshot was written with a different training config")
        start, log = int(meta["step"]), list(meta["log"])
        for p in model.params.values():
            p.requires_grad = True
    else:
        model, moments, start, log = Model.initialise(net_cfg), {}, 0, []

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        meta = run_metadata(config, len(pairs), fx, None if resume is None else str(resume))
        atomic_write(out / "run.json", json.dumps(meta, indent=2, sort_keys=True).encode())

    result = TrainResult(model, moments, log, start, config.components())
    end = total_steps(len(pairs), config)
    last_good = Path(resume) if resume is not None else None
    for step in range(start, end):
        epoch, batch = batch_for_step(pairs, step, config)
        lr = lr_at(epoch, config)
        try:
            total, parts = train_step(model, moments, batch, lr, step + 1, config, fx)
        except NumericError as exc:
            hint = f"; last good checkpoint: {last_good}" if last_good else ""
            raise NumericError(f"{exc}{hint}") from None
        row = {"step": step + 1, "epoch": epoch, "lr": lr, "total": total}
        row.update({t: parts.get(t) for t in TERMS})
        log.append(row)
        result.step = step + 1
        if progress is not None:
            progress(row)
        if out is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            last_good = save_snapshot(out / f"step_{step + 1:06d}.uwnr", model, moments, step + 1,
                                      log, config)
            result.checkpoints.append(last_good)
            write_log(out / "loss_log.csv", log)
    if out is not None:
        result.checkpoints.append(save_snapshot(out / "final.uwnr", model, moments, result.step,
                                                log, config))
        write_log(out / "loss_log.csv", log)
    return result


def load_pairs(manifest, config: TrainConfig, split: str | None = "train") -> list[DatasetPair]:
    recs = load_manifest(manifest)
    if split is not None:
        recs = [r for r in recs if r.split == split]
    return [load_pair(r, config.synthetic_depth) for r in recs]


def train_from_manifest(manifest, config: TrainConfig, out_dir, resume=None, progress=None):
    pairs = load_pairs(manifest, config)
    if not pairs:
        raise ConfigError(f"{manifest}: no training records")
    return train(pairs, config, out_dir, resume, progress)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
