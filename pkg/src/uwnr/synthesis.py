"""Batch synthesis of an underwater dataset from clean images and an exemplar pool.

Each clean record is paired with one exemplar (random, round-robin or fixed),
rendered, and written together with a provenance record. Pairing depends only
on the seed and the record's position, so an interrupted or partially deleted
run can be resumed and reproduces identical bytes.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write, file_hash, load_model
from .data import IMAGE_EXTS, ManifestRecord, encode_image, load_image, load_manifest, load_pair, save_manifest
from .errors import ConfigError
from .render import Conditioning, render

log = logging.getLogger(__name__)

POLICIES = ("random", "round-robin", "fixed")


@dataclass(frozen=True)
class SynthesisJob:
    clean_manifest: Path
    exemplar_dir: Path
    checkpoint: Path
    out_dir: Path
    policy: str = "random"
    fixed_exemplar: str | None = None
    seed: int = 0
    pad: bool = False
    synthetic_depth: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"pairing policy must be one of {POLICIES}, got {self.policy!r}")


def exemplar_pool(folder) -> list[Path]:
    folder = Path(folder)
    pool = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTS) \
        if folder.is_dir() else []
    if not pool:
        raise ConfigError(f"{folder}: exemplar pool is empty")
    return pool


def choose_exemplar(index: int, pool_size: int, job: SynthesisJob, fixed_index: int = 0) -> int:
    if job.policy == "fixed":
        return fixed_index
    if job.policy == "round-robin":
        return index % pool_size
    return int(np.random.default_rng([job.seed, index]).integers(pool_size))


def _read_provenance(path: Path) -> dict[str, dict]:
    """Completed records by id; a torn final line from a crash is ignored."""
    done = {}
    if not path.is_file():
        return done
    for line in path.read_text().splitlines():
        try:
            rec = json.loads(line)
            done[rec["id"]] = rec
        except (json.JSONDecodeError, KeyError, TypeError):
            continue
    return done


def synthesize(job: SynthesisJob) -> list[dict]:
    """Run or resume ``job``; returns the provenance records in clean-manifest order."""
    out = Path(job.out_dir)
    records = load_manifest(job.clean_manifest)
    if not records:
        raise ConfigError(f"{job.clean_manifest}: no clean records")
    pool = exemplar_pool(job.exemplar_dir)
    names = [p.stem for p in pool]
    fixed_index = 0
    if job.policy == "fixed":
        if job.fixed_exemplar is None:
            fixed_index = 0
        elif job.fixed_exemplar in names:
            fixed_index = names.index(job.fixed_exemplar)
        else:
            raise ConfigError(f"fixed exemplar {job.fixed_exemplar!r} not in pool")

    model, _, meta = load_model(job.checkpoint)
    cond = Conditioning.from_meta(meta)
    ckpt_hash = file_hash(job.checkpoint)
    prov_path = out / "provenance.jsonl"
    done = _read_provenance(prov_path)
    (out / "uw").mkdir(parents=True, exist_ok=True)

    plan = []
    for i, rec in enumerate(records):
        ex = pool[choose_exemplar(i, len(pool), job, fixed_index)]
        target = out / "uw" / f"{rec.id}.png"
        prev = done.get(rec.id)
        if (prev is not None and target.is_file() and prev.get("exemplar_id") == ex.stem
                and prev.get("checkpoint_sha256") == ckpt_hash):
            continue
        plan.append((i, rec, ex, target))
    log.info("synthesis: %d of %d records to render", len(plan), len(records))

    def work(item):
        _, rec, ex, _ = item
        pair = load_pair(rec, job.synthetic_depth)
        img = render(pair.reference, pair.depth, load_image(ex), model, cond, job.pad)
        return encode_image(img, ".png")

    # rendering may run in parallel; files and provenance are written by this thread only
    with ThreadPoolExecutor(max_workers=max(1, job.threads)) as pool_exec:
        with open(prov_path, "a") as prov:
            for item, blob in zip(plan, pool_exec.map(work, plan)):
                _, rec, ex, target = item
                atomic_write(target, blob)
                entry = {"id": rec.id, "clean_id": rec.id, "clean": rec.ref, "exemplar_id": ex.stem,
                         "exemplar": str(ex), "checkpoint_sha256": ckpt_hash,
                         "output": str(target.relative_to(out)), "policy": job.policy,
                         "seed": job.seed}
                prov.write(json.dumps(entry, sort_keys=True) + "\n")
                prov.flush()
                done[rec.id] = entry

    ordered = [done[r.id] for r in records]
    atomic_write(prov_path, "".join(json.dumps(e, sort_keys=True) + "\n" for e in ordered).encode())
    save_manifest(out / "manifest.jsonl",
                  [ManifestRecord(r.id, str(out / "uw" / f"{r.id}.png"), r.ref, r.depth, r.split)
                   for r in records])
    return ordered
