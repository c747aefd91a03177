import numpy as np
import pytest

from oracles import brute_udc, dense_gaussian_blur, fd_gradient, naive_conv2d, rel_error
from uwnr import numerics as nx
from uwnr.errors import CheckpointError, ConfigError, ShapeError
from uwnr.features import FeatureExtractor
from uwnr.lightfield import extract_light_field
from uwnr.losses import (
    LossWeights, lfc_loss, perceptual_loss, rec_loss, total_loss, udc_loss,
)

SMALL_FX = FeatureExtractor.default(seed=1, channels=(3, 4, 6, 8))


def rand_img(seed, h=8, w=8):
    return np.random.default_rng(seed).random((h, w, 3))


def chw(img):
    return np.transpose(img, (2, 0, 1))[None]


# -- reconstruction --------------------------------------------------------------

def test_rec_identical_and_offset():
    a = rand_img(0)
    assert rec_loss(a, a).item() == 0.0
    assert abs(rec_loss(a + 0.1, a).item() - 0.1) < 1e-15


def test_rec_loop_oracle():
    a, b = rand_img(1, 5, 7), rand_img(2, 5, 7)
    acc = 0.0
    for i in range(5):
        for j in range(7):
            for c in range(3):
                acc += abs(a[i, j, c] - b[i, j, c])
    assert abs(rec_loss(a, b).item() - acc / 105) < 1e-12


def test_rec_shape_mismatch():
    with pytest.raises(ShapeError):
        rec_loss(rand_img(0, 8, 8), rand_img(0, 8, 6))


# -- perceptual --------------------------------------------------------------------

def oracle_features(fx, x):
    outs = []
    for k, s in zip(fx.kernels, fx.strides):
        x = np.maximum(naive_conv2d(x, k.data, stride=s, padding=1), 0)
        outs.append(x)
    return [outs[t] for t in fx.taps]


def test_perceptual_identical_is_zero():
    a = rand_img(3, 16, 16)
    assert perceptual_loss(a, a, FeatureExtractor.default()).item() == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_perceptual_per_tap_oracle(seed):
    a, b = rand_img(seed, 9, 10), rand_img(seed + 50, 9, 10)
    fa, fb = oracle_features(SMALL_FX, chw(a)), oracle_features(SMALL_FX, chw(b))
    expected = 0.0
    for x, y in zip(fa, fb):
        _, c, h, w = x.shape
        expected += np.sum((x - y) ** 2) / (c * h * w)
    got = perceptual_loss(a, b, SMALL_FX).item()
    assert got >= 0
    assert abs(got - expected) < 1e-10


def test_perceptual_tap_subset():
    fx = FeatureExtractor(SMALL_FX.kernels, SMALL_FX.strides, (2,))
    a, b = rand_img(5), rand_img(6)
    fa, fb = oracle_features(fx, chw(a)), oracle_features(fx, chw(b))
    assert abs(perceptual_loss(a, b, fx).item() - np.mean((fa[0] - fb[0]) ** 2)) < 1e-12


def test_feature_extractor_defaults():
    fx = FeatureExtractor.default(seed=0)
    assert [k.shape[:2] for k in fx.kernels] == [(16, 3), (32, 16), (64, 32), (64, 64), (64, 64)]
    assert fx.tap_shapes(32, 32) == [(16, 32, 32), (32, 16, 16), (64, 8, 8), (64, 4, 4), (64, 2, 2)]
    assert fx.fingerprint() == FeatureExtractor.default(seed=0).fingerprint()
    assert fx.fingerprint() != FeatureExtractor.default(seed=1).fingerprint()
    x = nx.Tensor(chw(rand_img(0, 32, 32)))
    assert [f.shape[1:] for f in fx.features(x)] == fx.tap_shapes(32, 32)
    assert fx.embed(x).shape == (1, 64)


def test_feature_extractor_weights_frozen():
    fx = FeatureExtractor.default(seed=0)
    with pytest.raises(ValueError):
        fx.kernels[0].data[0, 0, 0, 0] = 1.0


def test_feature_extractor_save_load(tmp_path):
    path = tmp_path / "fx.uwnr"
    SMALL_FX.save(path)
    back = FeatureExtractor.load(path)
    assert back.fingerprint() == SMALL_FX.fingerprint()
    a, b = rand_img(0), rand_img(1)
    assert perceptual_loss(a, b, back).item() == perceptual_loss(a, b, SMALL_FX).item()


def test_feature_extractor_load_rejects_network(tmp_path):
    from uwnr import checkpoint
    from uwnr.network import Model, NetworkConfig
    path = tmp_path / "net.uwnr"
    checkpoint.save_model(path, Model.initialise(NetworkConfig(base_channels=4, depth_levels=1)))
    with pytest.raises(CheckpointError):
        FeatureExtractor.load(path)


# -- underwater dark channel ---------------------------------------------------------

def test_udc_identical_and_red_only():
    a = rand_img(7)
    assert udc_loss(a, a, 3).item() == 0.0
    b = a.copy()
    b[..., 0] = np.random.default_rng(8).random((8, 8))
    assert udc_loss(a, b, 3).item() == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_udc_composed_oracle(seed):
    a, b = rand_img(seed), rand_img(seed + 100)
    expected = np.mean(np.abs(brute_udc(a, 3) - brute_udc(b, 3)))
    assert abs(udc_loss(a, b, 3).item() - expected) < 1e-12


# -- light field consistency --------------------------------------------------------------

def test_lfc_constant_fixed_point():
    c = np.full((8, 8, 3), 0.37)
    assert lfc_loss(c, c, [2.0, 4.0]).item() < 1e-15


@pytest.mark.parametrize("seed", range(3))
def test_lfc_blur_oracle(seed):
    sigmas = [1.0, 2.5]
    pred = rand_img(seed, 10, 9)
    lf = extract_light_field(rand_img(seed + 1, 10, 9), sigmas)

    def capture(img):
        return sum(dense_gaussian_blur(img, s) for s in sigmas) / len(sigmas)

    expected = np.mean(np.abs(capture(chw(pred)[0]) - capture(lf.planes)))
    got = lfc_loss(pred, lf, sigmas).item()
    assert got >= 0
    assert abs(got - expected) < 1e-10


def test_lfc_broadcasts_single_map_over_batch():
    sigmas = [1.0]
    lf = extract_light_field(rand_img(0), sigmas)
    batch = np.stack([chw(rand_img(1))[0], chw(rand_img(2))[0]])
    both = lfc_loss(nx.Tensor(batch), lf, sigmas).item()
    each = [lfc_loss(batch[i:i + 1], lf, sigmas).item() for i in range(2)]
    assert abs(both - np.mean(each)) < 1e-14


# -- total --------------------------------------------------------------------------

def test_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(0, 0, 0, 0)
    with pytest.raises(ConfigError):
        LossWeights(rec=-1)
    with pytest.raises(ConfigError):
        LossWeights(per=float("nan"))
    assert LossWeights(1, 0, 2, 0).active() == ("rec", "udc")


def test_total_projection_exact():
    a, b = rand_img(0), rand_img(1)
    lf = extract_light_field(rand_img(2), [1.0])
    total, parts = total_loss(a, b, lf, LossWeights(1, 0, 0, 0), None, 3, [1.0])
    assert total.item() == rec_loss(a, b).item()
    assert list(parts) == ["rec"]


def test_total_identical_inputs_zero_terms():
    a = rand_img(4)
    lf = extract_light_field(rand_img(5), [1.0])
    _, parts = total_loss(a, a, lf, LossWeights(), SMALL_FX, 3, [1.0])
    assert parts["rec"] == parts["per"] == parts["udc"] == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_total_recomposition(seed):
    rng = np.random.default_rng(seed)
    w = LossWeights(*rng.uniform(0.1, 3, 4))
    a, b = rand_img(seed), rand_img(seed + 1)
    lf = extract_light_field(rand_img(seed + 2), [1.5])
    total, parts = total_loss(a, b, lf, w, SMALL_FX, 3, [1.5])
    manual = (w.rec * rec_loss(a, b).item() + w.per * perceptual_loss(a, b, SMALL_FX).item()
              + w.udc * udc_loss(a, b, 3).item() + w.lfc * lfc_loss(a, lf, [1.5]).item())
    assert abs(total.item() - manual) < 1e-12
    assert set(parts) == {"rec", "per", "udc", "lfc"}


def test_total_requires_extractor_for_perceptual():
    with pytest.raises(ConfigError):
        total_loss(rand_img(0), rand_img(1), rand_img(2), LossWeights(), None, 3, [1.0])


def _grad(pred, target, lf, weights, fx):
    x = nx.Tensor(pred, requires_grad=True)
    with nx.Tape() as tape:
        loss, _ = total_loss(x, target, lf, weights, fx, 3, [1.0, 2.0])
    nx.backward(tape, loss)
    return x.grad


@pytest.mark.parametrize("seed", range(10))
def test_total_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random((1, 3, 16, 16))
    target = rng.random((1, 3, 16, 16))
    lf = extract_light_field(rng.random((16, 16, 3)), [1.0, 2.0])
    weights = LossWeights(*rng.uniform(0.5, 2, 4))
    analytic = _grad(pred, target, lf, weights, SMALL_FX)

    def f(v):
        return total_loss(nx.Tensor(v), target, lf, weights, SMALL_FX, 3, [1.0, 2.0])[0].item()

    assert rel_error(analytic, fd_gradient(f, pred, h=1e-6)) < 1e-4


@pytest.mark.parametrize("term", ["rec", "per", "udc", "lfc"])
def test_weight_linearity(term):
    rng = np.random.default_rng(3)
    pred, target = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))
    lf = extract_light_field(rng.random((8, 8, 3)), [1.0, 2.0])
    one = {t: 1.0 if t == term else 0.0 for t in ("rec", "per", "udc", "lfc")}
    g1 = _grad(pred, target, lf, LossWeights(**one), SMALL_FX)
    one[term] = 2.5
    g2 = _grad(pred, target, lf, LossWeights(**one), SMALL_FX)
    np.testing.assert_allclose(g2, 2.5 * g1, rtol=1e-12, atol=1e-18)
