"""Independent reference computations used by the test-suite.

Nothing here imports the package's numerics; each oracle is a direct loop
or closed form so it can check the vectorised paths.
"""
import math

import numpy as np


def fd_gradient(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric):
    """Max abs deviation relative to the gradient's scale (inf-norm)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def naive_conv2d(x, k, stride=1, padding=0, pad_mode="zero"):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    if pad_mode == "zero":
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), mode="reflect")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ci, i * stride + u, j * stride + v] * k[o, ci, u, v]
                    out[b, o, i, j] = acc
    return out


def gaussian_weights(sigma):
    r = math.ceil(3 * sigma)
    w = np.array([math.exp(-(i * i) / (2 * sigma * sigma)) for i in range(-r, r + 1)])
    return w / w.sum(), r


def dense_gaussian_blur(img, sigma):
    """Blur the last two axes with a full 2-D kernel over a reflect-padded image."""
    w1, r = gaussian_weights(sigma)
    k2 = np.outer(w1, w1)
    lead = img.shape[:-2]
    h, w = img.shape[-2:]
    flat = img.reshape((-1, h, w))
    out = np.zeros_like(flat)
    for c in range(flat.shape[0]):
        p = np.pad(flat[c], r, mode="reflect")
        for i in range(h):
            for j in range(w):
                out[c, i, j] = np.sum(p[i:i + 2 * r + 1, j:j + 2 * r + 1] * k2)
    return out.reshape(lead + (h, w))


def brute_udc(img_hwc, window):
    """Min over a border-clipped window of min(g, b)."""
    h, w, _ = img_hwc.shape
    r = window // 2
    gb = np.minimum(img_hwc[..., 1], img_hwc[..., 2])
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            best = math.inf
            for u in range(max(0, i - r), min(h, i + r + 1)):
                for v in range(max(0, j - r), min(w, j + r + 1)):
                    best = min(best, gb[u, v])
            out[i, j] = best
    return out


# -- UIQM, written from its published definition with plain loops ------------------

def ref_sobel(ch):
    h, w = ch.shape
    p = np.pad(ch, 1, mode="symmetric")
    gx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            sx = sy = 0.0
            for u in range(3):
                for v in range(3):
                    sx += gx[u][v] * p[i + u, j + v]   # derivative across columns
                    sy += gx[v][u] * p[i + u, j + v]   # derivative across rows
            out[i, j] = math.sqrt(sx * sx + sy * sy)
    return out


def ref_trimmed(values, alpha=0.1):
    v = sorted(values)
    k = len(v)
    tl, tr = math.ceil(alpha * k), math.floor(alpha * k)
    mu = sum(v[tl:k - tr]) / (k - tl - tr)
    var = sum((x - mu) ** 2 for x in v) / k
    return mu, var


def ref_uiqm(img, block=8, gamma=1026.0):
    x = img * 255.0
    h, w, _ = x.shape
    rg, yb = [], []
    for i in range(h):
        for j in range(w):
            r, g, b = x[i, j]
            rg.append(r - g)
            yb.append((r + g) / 2 - b)
    m1, v1 = ref_trimmed(rg)
    m2, v2 = ref_trimmed(yb)
    c = -0.0268 * math.sqrt(m1 ** 2 + m2 ** 2) + 0.1586 * math.sqrt(v1 + v2)

    k1, k2 = h // block, w // block
    s = 0.0
    for ch, lam in zip(range(3), (0.299, 0.587, 0.114)):
        edge = x[..., ch] * ref_sobel(x[..., ch])
        acc = 0.0
        for bi in range(k1):
            for bj in range(k2):
                blk = edge[bi * block:(bi + 1) * block, bj * block:(bj + 1) * block]
                if blk.min() > 0:
                    acc += math.log(blk.max() / blk.min())
        s += lam * 2.0 / (k1 * k2) * acc

    con = 0.0
    for bi in range(k1):
        for bj in range(k2):
            blk = x[bi * block:(bi + 1) * block, bj * block:(bj + 1) * block, :]
            hi, lo = blk.max(), blk.min()
            minus = gamma * (hi - lo) / (gamma - lo)
            plus = hi + lo - hi * lo / gamma
            if minus > 0:
                q = minus / plus
                con += q * math.log(q)
    con = -con / (k1 * k2)
    return 0.0282 * c + 0.2953 * s + 3.5753 * con, c, s, con


def checkerboard(n=32, cell=4):
    ii, jj = np.indices((n, n))
    mask = ((ii // cell + jj // cell) % 2).astype(float)
    dark = np.array([0.1, 0.35, 0.45])
    light = np.array([0.8, 0.85, 0.6])
    img = dark + mask[..., None] * (light - dark)
    # a gentle ramp keeps block minima of the edge map above zero in some blocks
    return np.clip(img + 0.002 * ii[..., None], 0, 1)
