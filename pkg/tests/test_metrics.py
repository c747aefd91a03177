import math

import numpy as np
import pytest

from oracles import checkerboard, ref_uiqm
from uwnr.errors import NumericError, ShapeError
from uwnr.features import FeatureExtractor
from uwnr.metrics import MetricReport, embed_for_fid, evaluate_pair, fid, psnr, ssim, uiqm


# -- PSNR ----------------------------------------------------------------------

def test_psnr_identical_cap():
    a = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(a, a) == 99.0


def test_psnr_uniform_offset():
    a = np.full((6, 6, 3), 0.3)
    assert abs(psnr(a + 0.1, a) - 20.0) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_psnr_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((7, 5, 3)), rng.random((7, 5, 3))
    s = 0.0
    for v in (a - b).ravel():
        s += v * v
    assert abs(psnr(a, b) - 10 * math.log10(1 / (s / a.size))) < 1e-9


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    a = rng.random((16, 16, 3))
    noise = rng.uniform(-1, 1, a.shape)
    values = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


# -- SSIM ----------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_ssim_self_is_one(seed):
    a = np.random.default_rng(seed).random((16, 13, 3))
    assert ssim(a, a) == 1.0


def test_ssim_constant_closed_form():
    c1 = 0.01 ** 2
    expected = (2 * 0.5 * 0.9 + c1) / (0.5 ** 2 + 0.9 ** 2 + c1)
    got = ssim(np.full((12, 12, 3), 0.5), np.full((12, 12, 3), 0.9))
    assert abs(got - expected) < 1e-12


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(4)
    a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
    assert ssim(a, b) == ssim(b, a)
    assert -1 <= ssim(a, 1 - a) <= 1


def test_ssim_too_small():
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


# -- UIQM ----------------------------------------------------------------------

def test_uiqm_gray_has_zero_uicm():
    g = np.random.default_rng(0).random((16, 16))
    _, c, _, _ = uiqm(np.repeat(g[..., None], 3, axis=2))
    assert c == 0.0


def test_uiqm_constant_has_zero_uism():
    _, _, s, _ = uiqm(np.full((16, 16, 3), [0.2, 0.5, 0.7]))
    assert s == 0.0
    # contrast blocks span all channels, so only a gray constant has none
    assert uiqm(np.full((16, 16, 3), 0.4))[3] == 0.0


def test_uiqm_checkerboard_reference():
    img = checkerboard()
    got = uiqm(img)
    ref = ref_uiqm(img)
    assert ref[2] > 0   # the fixture must exercise the sharpness term
    for g, r in zip(got, ref):
        assert abs(g - r) < 1e-6


@pytest.mark.parametrize("seed", range(2))
def test_uiqm_random_reference(seed):
    img = np.random.default_rng(seed).uniform(0.05, 0.95, (24, 16, 3))
    for g, r in zip(uiqm(img), ref_uiqm(img)):
        assert abs(g - r) < 1e-6


def test_uiqm_periodic_shift_invariance():
    tile = np.random.default_rng(3).uniform(0.1, 0.9, (8, 8, 3))
    img = np.tile(tile, (4, 4, 1))
    base = uiqm(img)
    shifted = uiqm(np.roll(img, (8, 16), axis=(0, 1)))
    np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-12)


# -- FID -----------------------------------------------------------------------

def test_fid_self_zero_and_symmetric():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((40, 5)), rng.standard_normal((30, 5)) + 0.3
    assert abs(fid(a, a)) < 1e-8
    assert abs(fid(a, b) - fid(b, a)) < 1e-8
    assert fid(a, b) >= 0


def test_fid_point_masses():
    mu_a, mu_b = np.array([1.0, 2.0, 3.0]), np.array([0.0, -1.0, 3.5])
    a, b = np.tile(mu_a, (5, 1)), np.tile(mu_b, (7, 1))
    assert abs(fid(a, b) - np.sum((mu_a - mu_b) ** 2)) < 1e-8


def test_fid_diagonal_closed_form():
    # axis-aligned sets: the covariances are exactly diagonal
    a = np.array([[1, 0], [-1, 0], [0, 2], [0, -2]], float) + [0.5, 1.0]
    b = np.array([[3, 0], [-3, 0], [0, 0.5], [0, -0.5]], float) + [-1.0, 0.0]
    va, vb = np.var(a, axis=0) + 1e-6, np.var(b, axis=0) + 1e-6
    mu = a.mean(0) - b.mean(0)
    expected = np.sum(mu ** 2) + sum(x + y - 2 * math.sqrt(x * y) for x, y in zip(va, vb))
    assert abs(fid(a, b) - expected) < 1e-8


def test_fid_degenerate_without_regularisation():
    a = np.tile([1.0, 2.0], (4, 1))
    with pytest.raises(NumericError):
        fid(a, a, eps=0.0)


def test_embed_for_fid_shape_and_permutation():
    fx = FeatureExtractor.default(seed=2, channels=(3, 4, 6))
    rng = np.random.default_rng(0)
    imgs = [rng.random((8, 8, 3)) for _ in range(4)]
    e = embed_for_fid(imgs, fx)
    assert e.shape == (4, 6)
    np.testing.assert_array_equal(embed_for_fid(imgs, fx), e)
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(embed_for_fid([imgs[i] for i in perm], fx), e[perm])


def test_report_table_and_dict():
    rng = np.random.default_rng(0)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    rep = MetricReport([evaluate_pair("x", a, b)], fid=1.5, embedding="abc")
    d = rep.to_dict()
    assert d["records"][0]["id"] == "x"
    assert set(d["mean"]) == {"psnr", "ssim", "uiqm", "uicm", "uism", "uiconm"}
    table = rep.table()
    assert "PSNR" in table and "1.50" in table and "abc" in table
