import json
import os

import numpy as np
import pytest

from uwnr import checkpoint
from uwnr.cli import main, make_grid
from uwnr.data import load_image, save_image, save_manifest, ManifestRecord
from uwnr.lightfield import extract_light_field
from uwnr.network import Model, NetworkConfig
from uwnr.synthetic import smoke_pairs


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pairs = smoke_pairs(n=4, size=16, seed=2)
    for p in pairs:
        save_image(root / "uw" / f"{p.id}.png", p.underwater)
        save_image(root / "ref" / f"{p.id}.png", p.reference)
        (root / "depth").mkdir(exist_ok=True)
        np.save(root / "depth" / f"{p.id}.npy", p.depth)
    rng = np.random.default_rng(0)
    save_image(root / "big.png", rng.random((250, 250, 3)))
    save_image(root / "ex_green.png", pairs[1].underwater)
    save_image(root / "ex_blue.png", pairs[0].underwater)
    ck = root / "small.uwnr"
    checkpoint.save_model(ck, Model.initialise(NetworkConfig(base_channels=4, depth_levels=1, seed=1)))
    deep = root / "deep.uwnr"
    checkpoint.save_model(deep, Model.initialise(NetworkConfig(base_channels=4, depth_levels=3)))
    return root, pairs


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    return json.loads([ln for ln in err.splitlines() if ln.startswith("{")][-1])


def test_extract_lf_with_sidecar(files, capsys, tmp_path):
    root, pairs = files
    code, _, _ = run(capsys, "extract-lf", "--input", root / "ex_blue.png", "--output", tmp_path / "lf.png",
                     "--sigmas", "2,4", "--sidecar")
    assert code == 0
    planes = np.load(tmp_path / "lf.npy")
    expected = extract_light_field(load_image(root / "ex_blue.png"), [2.0, 4.0]).planes
    np.testing.assert_array_equal(planes, expected)
    # 8-bit quantisation of the [0, 1] map
    assert np.abs(load_image(tmp_path / "lf.png") - np.transpose(planes, (1, 2, 0))).max() <= 0.5 / 255 + 1e-12
    assert run(capsys, "extract-lf", "--input", root / "ex_blue.png", "--output", tmp_path / "b.png",
               "--bits", "16")[0] == 0
    assert not (tmp_path / "b.npy").exists()


def test_render_deterministic_and_diverse(files, capsys, tmp_path):
    root, pairs = files
    base = ["render", "--clean", root / "ref" / f"{pairs[0].id}.png",
            "--depth", root / "depth" / f"{pairs[0].id}.npy", "--checkpoint", root / "small.uwnr"]
    for name, ex in (("a1", "ex_blue"), ("a2", "ex_blue"), ("b", "ex_green")):
        code, _, err = run(capsys, *base, "--exemplar", root / f"{ex}.png", "--out", tmp_path / f"{name}.png")
        assert code == 0, err
    assert (tmp_path / "a1.png").read_bytes() == (tmp_path / "a2.png").read_bytes()
    a, b = load_image(tmp_path / "a1.png"), load_image(tmp_path / "b.png")
    assert np.abs(a - b).mean() > 0


def test_render_pad_round_trip(files, capsys, tmp_path):
    root, _ = files
    args = ["render", "--clean", root / "big.png", "--synthetic-depth", "vertical-gradient",
            "--exemplar", root / "ex_blue.png", "--checkpoint", root / "deep.uwnr"]
    code, _, err = run(capsys, *args, "--out", tmp_path / "nopad.png")
    assert code == 1
    e = error_line(err)
    assert e["error"] == "shape" and "--pad" in e["message"] and "256x256" in e["message"]
    code, _, err = run(capsys, *args, "--pad", "--out", tmp_path / "pad.png")
    assert code == 0, err
    assert load_image(tmp_path / "pad.png").shape == (250, 250, 3)


def test_render_rejects_tampered_checkpoint(files, capsys, tmp_path):
    root, pairs = files
    ck = checkpoint.load(root / "small.uwnr")
    ck.fingerprint = "0" * 16
    checkpoint.save(tmp_path / "bad.uwnr", ck)
    code, _, err = run(capsys, "render", "--clean", root / "ref" / f"{pairs[0].id}.png",
                       "--synthetic-depth", "vertical-gradient", "--exemplar", root / "ex_blue.png",
                       "--checkpoint", tmp_path / "bad.uwnr", "--out", tmp_path / "x.png")
    assert code == 1 and error_line(err)["error"] == "checkpoint"


def test_missing_file_error_line(files, capsys, tmp_path):
    root, _ = files
    code, _, err = run(capsys, "extract-lf", "--input", tmp_path / "nope.png", "--out", tmp_path / "o.png")
    assert code == 1
    e = error_line(err)
    assert e["error"] == "io" and "nope.png" in e["message"]


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["render"])
    assert exc.value.code == 2


def test_render_physical_beta_zero(files, capsys, tmp_path):
    root, pairs = files
    clean = root / "ref" / f"{pairs[0].id}.png"
    code, _, _ = run(capsys, "render-physical", "--clean", clean, "--synthetic-depth", "vertical-gradient",
                     "--beta", "0", "--background", "0.1,0.5,0.6", "--out", tmp_path / "p.png")
    assert code == 0
    assert (tmp_path / "p.png").read_bytes() == open(clean, "rb").read() or \
        np.array_equal(load_image(tmp_path / "p.png"), load_image(clean))
    code, _, _ = run(capsys, "render-physical", "--clean", clean, "--depth",
                     root / "depth" / f"{pairs[0].id}.npy", "--beta", "0.5,0.2,0.1",
                     "--exemplar", root / "ex_green.png", "--output", tmp_path / "q.png")
    assert code == 0


def test_make_manifest_and_train(files, capsys, tmp_path):
    root, _ = files
    code, _, _ = run(capsys, "make-manifest", "--root", root, "--out", tmp_path / "m.jsonl")
    assert code == 0
    assert len((tmp_path / "m.jsonl").read_text().splitlines()) == 4
    cfg = {"epochs": 2, "decay_start": 1, "batch_size": 2, "patch_size": 8, "base_channels": 4,
           "depth_levels": 1, "sigmas": [2.0], "udc_window": 3, "sa_kernel": 3}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "--seed", "5", "train", "--config", tmp_path / "c.json", "--manifest",
                       tmp_path / "m.jsonl", "--out", tmp_path / "run", "--max-steps", "3")
    assert code == 0, err
    meta = json.loads((tmp_path / "run" / "run.json").read_text())
    assert meta["seed"] == 5 and meta["total_steps"] == 3
    assert (tmp_path / "run" / "final.uwnr").is_file()
    assert len((tmp_path / "run" / "loss_log.csv").read_text().splitlines()) == 4


def test_eval_metrics_report(files, capsys, tmp_path):
    root, _ = files
    code, out, err = run(capsys, "eval-metrics", "--pred-dir", root / "uw", "--ref-dir", root / "ref",
                         "--fid", "--report", tmp_path / "r.json", "--threads", "2")
    assert code == 0, err
    rep = json.loads((tmp_path / "r.json").read_text())
    assert len(rep["records"]) == 4 and rep["fid"] >= 0
    assert rep["embedding"].startswith("feature_pyramid:")
    assert "PSNR" in out and (tmp_path / "r.txt").read_text().strip() == out.strip()


@pytest.fixture
def synth_job(files, tmp_path):
    root, pairs = files
    recs = [ManifestRecord(p.id, str(root / "uw" / f"{p.id}.png"), str(root / "ref" / f"{p.id}.png"),
                           str(root / "depth" / f"{p.id}.npy")) for p in pairs]
    save_manifest(tmp_path / "clean.jsonl", recs)
    pool = tmp_path / "pool"
    pool.mkdir()
    for name in ("ex_blue", "ex_green"):
        (pool / f"{name}.png").write_bytes((root / f"{name}.png").read_bytes())
    return ["synth-dataset", "--clean-manifest", tmp_path / "clean.jsonl", "--exemplars", pool,
            "--checkpoint", root / "small.uwnr"]


def test_synth_fixed_policy(synth_job, capsys, tmp_path):
    code, _, err = run(capsys, *synth_job, "--out", tmp_path / "out", "--policy", "fixed",
                       "--fixed-exemplar", "ex_green", "--seed", "1")
    assert code == 0, err
    prov = [json.loads(l) for l in (tmp_path / "out" / "provenance.jsonl").read_text().splitlines()]
    assert len(prov) == 4 and len({p["id"] for p in prov}) == 4
    assert {p["exemplar_id"] for p in prov} == {"ex_green"}
    assert all(len(p["checkpoint_sha256"]) == 64 for p in prov)
    assert len((tmp_path / "out" / "manifest.jsonl").read_text().splitlines()) == 4


def test_synth_resumable(synth_job, capsys, tmp_path):
    out = tmp_path / "out"
    args = [*synth_job, "--out", out, "--policy", "random", "--seed", "7", "--threads", "2"]
    assert run(capsys, *args)[0] == 0
    files = sorted((out / "uw").iterdir())
    before = {f.name: f.read_bytes() for f in files}
    prov_before = (out / "provenance.jsonl").read_bytes()
    kept = files[1::2]
    stamps = {f.name: os.stat(f).st_mtime_ns for f in kept}
    for f in files[::2]:
        f.unlink()
    # a torn provenance line, as left by a crash mid-append
    with open(out / "provenance.jsonl", "a") as fh:
        fh.write('{"id": "half')
    assert run(capsys, *args)[0] == 0
    after = {f.name: f.read_bytes() for f in sorted((out / "uw").iterdir())}
    assert after == before
    assert all(os.stat(out / "uw" / n).st_mtime_ns == t for n, t in stamps.items())
    assert (out / "provenance.jsonl").read_bytes() == prov_before


def test_synth_round_robin(synth_job, capsys, tmp_path):
    assert run(capsys, *synth_job, "--out", tmp_path / "o", "--policy", "round-robin", "--seed", "0")[0] == 0
    prov = [json.loads(l) for l in (tmp_path / "o" / "provenance.jsonl").read_text().splitlines()]
    assert [p["exemplar_id"] for p in prov] == ["ex_blue", "ex_green"] * 2


def test_grid_layouts(files, capsys, tmp_path):
    root, pairs = files
    img = load_image(root / "ref" / f"{pairs[0].id}.png")
    one, notes = make_grid([img], ["a"])
    assert one.shape == (16 + 14, 16, 3) and notes == []
    np.testing.assert_array_equal(one[:16], img)
    four, _ = make_grid([img] * 4, list("abcd"))
    assert four.shape == (2 * 30, 2 * 16, 3)
    _, notes = make_grid([img, load_image(root / "big.png")], ["a", "b"])
    assert notes and "resized b" in notes[0]
    inputs = [root / "ref" / f"{p.id}.png" for p in pairs]
    for name in ("g1.png", "g2.png"):
        assert run(capsys, "grid", "--inputs", *inputs, "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "g1.png").read_bytes() == (tmp_path / "g2.png").read_bytes()
