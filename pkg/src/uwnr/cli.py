"""Command-line entry point: ``uwnr <subcommand> ...``.

Every subcommand exits 0 on success. On failure one JSON line
``{"error": <kind>, "message": <text>}`` goes to stderr and the exit code is 1
(2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import secrets
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import cv2
import numpy as np

from .checkpoint import atomic_write, load_model
from .data import (
    IMAGE_EXTS, load_depth, load_image, make_manifest, save_image, save_manifest, synthetic_depth,
)
from .errors import ConfigError, UWNRError
from .features import FeatureExtractor
from .lightfield import DEFAULT_EPSILON, DEFAULT_SIGMAS, extract_light_field
from .metrics import MetricReport, embed_for_fid, evaluate_pair, fid
from .physics import ScatterParams, as_depth, dcp_background_light, render_with_params
from .render import Conditioning, fit_exemplar, render
from .synthesis import POLICIES, SynthesisJob, synthesize
from .trainer import TrainConfig, train_from_manifest

log = logging.getLogger("uwnr")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _depth_for(args, hw) -> np.ndarray:
    if args.depth:
        return load_depth(args.depth)
    if args.synthetic_depth:
        return synthetic_depth(*hw, kind=args.synthetic_depth)
    raise ConfigError("give --depth or --synthetic-depth")


def _write_json(path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


# -- subcommands --------------------------------------------------------------

def cmd_extract_lf(args) -> None:
    exemplar = load_image(args.input)
    lf = extract_light_field(exemplar, args.sigmas, args.epsilon, source_id=Path(args.input).stem)
    save_image(args.out, lf.to_image(), bits=args.bits)
    if args.sidecar:
        np.save(Path(args.out).with_suffix(".npy"), lf.planes)
    log.info("light field map written to %s", args.out)


def cmd_render(args) -> None:
    model, _, meta = load_model(args.checkpoint, expected=None)
    clean = load_image(args.clean)
    depth = _depth_for(args, clean.shape[:2])
    cond = Conditioning.from_meta(meta)
    if args.sigmas:
        cond = Conditioning(args.sigmas, cond.dcp, cond.udc_window)
    out = render(clean, depth, load_image(args.exemplar), model, cond, pad=args.pad)
    save_image(args.out, out, bits=args.bits)


def cmd_render_physical(args) -> None:
    clean = load_image(args.clean)
    depth = _depth_for(args, clean.shape[:2])
    if args.background is not None:
        background = args.background
    elif args.exemplar:
        background = dcp_background_light(fit_exemplar(load_image(args.exemplar), clean.shape[:2]))
    else:
        raise ConfigError("give --background or --exemplar")
    beta = args.beta if len(args.beta) > 1 else args.beta[0]
    out = render_with_params(clean, as_depth(depth), ScatterParams(beta, background))
    save_image(args.out, out, bits=args.bits)


def cmd_train(args) -> None:
    cfg = TrainConfig.load(args.config)
    overrides = {}
    if args.seed_given:
        overrides["seed"] = args.seed
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    if overrides:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})

    def progress(row):
        if args.verbose:
            log.info("step %d epoch %d lr %.3g loss %.6f", row["step"], row["epoch"], row["lr"],
                     row["total"])

    res = train_from_manifest(args.manifest, cfg, args.out, resume=args.resume, progress=progress)
    log.info("trained %d steps; final checkpoint %s", res.step, res.checkpoints[-1])


def _images_in(folder) -> dict[str, Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise ConfigError(f"{folder}: not a directory")
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def cmd_eval_metrics(args) -> None:
    preds = _images_in(args.pred_dir)
    if not preds:
        raise ConfigError(f"{args.pred_dir}: no images")
    refs = _images_in(args.ref_dir) if args.ref_dir else {}
    missing = sorted(set(preds) - set(refs)) if refs else []
    if missing:
        raise ConfigError(f"no reference image for {missing[:3]}")

    def one(name):
        pred = load_image(preds[name])
        ref = load_image(refs[name]) if name in refs else None
        return evaluate_pair(name, pred, ref)

    names = sorted(preds)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as ex:
        report = MetricReport(list(ex.map(one, names)))
    report.corpus = {"pred_dir": str(args.pred_dir), "ref_dir": args.ref_dir, "count": len(names)}
    if args.fid:
        if not refs:
            raise ConfigError("--fid needs --ref-dir")
        fx = FeatureExtractor.load(args.fx_weights) if args.fx_weights else FeatureExtractor.default()
        a = embed_for_fid([load_image(preds[n]) for n in names], fx)
        b = embed_for_fid([load_image(refs[n]) for n in sorted(refs)], fx)
        report.fid = fid(a, b)
        report.embedding = f"feature_pyramid:{fx.fingerprint()}"
    _write_json(args.report, report.to_dict())
    table = report.table(args.label)
    atomic_write(Path(args.report).with_suffix(".txt"), (table + "\n").encode())
    print(table)


def cmd_synth_dataset(args) -> None:
    job = SynthesisJob(Path(args.clean_manifest), Path(args.exemplars), Path(args.checkpoint),
                       Path(args.out), args.policy, args.fixed_exemplar, args.seed, args.pad,
                       args.synthetic_depth, args.threads)
    records = synthesize(job)
    log.info("%d records in %s", len(records), args.out)


def cmd_make_manifest(args) -> None:
    records = make_manifest(args.root, split=args.split)
    save_manifest(args.out, records)
    log.info("%d records written to %s", len(records), args.out)


LABEL_STRIP = 14


def make_grid(images: list[np.ndarray], labels: list[str]) -> tuple[np.ndarray, list[str]]:
    """Tiles in a ceil(sqrt(n)) column layout, each above a label strip.

    Images whose size differs from the first are resized to it; the returned
    notes say which.
    """
    h, w = images[0].shape[:2]
    notes = []
    tiles = []
    for img, label in zip(images, labels):
        if img.shape[:2] != (h, w):
            notes.append(f"resized {label} from {img.shape[1]}x{img.shape[0]} to {w}x{h}")
            img = np.clip(cv2.resize(img, (w, h), interpolation=cv2.INTER_AREA), 0, 1)
        strip = np.full((LABEL_STRIP, w, 3), 255, np.uint8)
        cv2.putText(strip, label[: max(1, w // 7)], (2, LABEL_STRIP - 4), cv2.FONT_HERSHEY_PLAIN,
                    0.8, (0, 0, 0), 1, cv2.LINE_8)
        strip = strip / 255.0
        tiles.append(np.concatenate([img, strip], axis=0))
    cols = math.ceil(math.sqrt(len(tiles)))
    rows = math.ceil(len(tiles) / cols)
    blank = np.ones_like(tiles[0])
    tiles += [blank] * (rows * cols - len(tiles))
    grid = np.concatenate([np.concatenate(tiles[r * cols:(r + 1) * cols], axis=1)
                           for r in range(rows)], axis=0)
    return grid, notes


def cmd_grid(args) -> None:
    images = [load_image(p) for p in args.inputs]
    labels = args.labels or [Path(p).stem for p in args.inputs]
    if len(labels) != len(images):
        raise ConfigError(f"{len(labels)} labels for {len(images)} inputs")
    grid, notes = make_grid(images, labels)
    for n in notes:
        log.warning(n)
    save_image(args.out, grid)


# -- parser -------------------------------------------------------------------

def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # subcommands repeat the flags without defaults so they don't clobber earlier values
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=d(None),
                   help="seed for every random choice; if omitted a random seed is logged "
                        "(train falls back to the seed in its config)")
    g.add_argument("--threads", type=int, default=d(1), help="parallel per-image workers")
    g.add_argument("--verbose", "-v", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwnr", parents=[_global_flags(True)],
                                description="Underwater neural rendering toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    common = _global_flags(False)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    def depth_args(sp):
        sp.add_argument("--depth", help="depth map (.npy or image)")
        sp.add_argument("--synthetic-depth", choices=["vertical-gradient"], default=None)

    sp = add("extract-lf", cmd_extract_lf, "extract the light field map of an exemplar")
    sp.add_argument("--input", "--exemplar", dest="input", required=True)
    sp.add_argument("--output", "--out", dest="out", required=True)
    sp.add_argument("--bits", type=int, choices=[8, 16], default=8)
    sp.add_argument("--sidecar", action="store_true", help="also write the float map as <output>.npy")
    sp.add_argument("--sigmas", type=_floats, default=DEFAULT_SIGMAS)
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)

    sp = add("render", cmd_render, "render a clean image in the water of an exemplar")
    sp.add_argument("--clean", required=True)
    depth_args(sp)
    sp.add_argument("--exemplar", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--output", "--out", dest="out", required=True)
    sp.add_argument("--pad", action="store_true", help="mirror-pad to the size multiple, then crop")
    sp.add_argument("--sigmas", type=_floats, default=None)
    sp.add_argument("--bits", type=int, choices=[8, 16], default=8)

    sp = add("render-physical", cmd_render_physical, "physical scattering model baseline")
    sp.add_argument("--clean", required=True)
    depth_args(sp)
    sp.add_argument("--beta", type=_floats, required=True, help="one value or r,g,b")
    sp.add_argument("--background", type=_floats, default=None, help="r,g,b in [0,1]")
    sp.add_argument("--exemplar", help="estimate the background light from this image")
    sp.add_argument("--output", "--out", dest="out", required=True)
    sp.add_argument("--bits", type=int, choices=[8, 16], default=8)

    sp = add("train", cmd_train, "train the renderer")
    sp.add_argument("--config", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--output", "--out", dest="out", required=True)
    sp.add_argument("--resume", default=None, help="snapshot to continue from")
    sp.add_argument("--max-steps", type=int, default=None)

    sp = add("eval-metrics", cmd_eval_metrics, "PSNR / SSIM / UIQM / FID report")
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--ref-dir", default=None)
    sp.add_argument("--fid", action="store_true")
    sp.add_argument("--fx-weights", default=None, help="feature extractor checkpoint")
    sp.add_argument("--report", required=True, help="JSON path; a .txt table is written beside it")
    sp.add_argument("--label", default="method")

    sp = add("synth-dataset", cmd_synth_dataset, "render a dataset from clean images and exemplars")
    sp.add_argument("--clean-manifest", required=True)
    sp.add_argument("--exemplars", required=True, help="folder of exemplar images")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--output", "--out", dest="out", required=True)
    sp.add_argument("--policy", choices=POLICIES, default="random")
    sp.add_argument("--fixed-exemplar", default=None, help="exemplar file stem for --policy fixed")
    sp.add_argument("--pad", action="store_true")
    sp.add_argument("--synthetic-depth", choices=["vertical-gradient"], default=None)

    sp = add("make-manifest", cmd_make_manifest, "scan uw/, ref/, depth/ into a JSONL manifest")
    sp.add_argument("--root", required=True)
    sp.add_argument("--output", "--out", dest="out", required=True)
    sp.add_argument("--split", default="train")

    sp = add("grid", cmd_grid, "labelled comparison grid")
    sp.add_argument("--inputs", nargs="+", required=True)
    sp.add_argument("--labels", nargs="+", default=None)
    sp.add_argument("--output", "--out", dest="out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args.seed_given = args.seed is not None
    if not args.seed_given:
        args.seed = secrets.randbelow(2 ** 31)
        if args.command == "synth-dataset":
            log.warning("no --seed given; using seed %d", args.seed)
        elif args.command == "train":
            log.warning("no --seed given; using the seed in the training config")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except (UWNRError, OSError) as exc:
        kind = getattr(exc, "kind", "io")
        print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
