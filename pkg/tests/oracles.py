"""Independent reference computations for the image-quality metrics."""

import numpy as np
from scipy import ndimage


def pairs(n, size=32, seed=0):
    """Random benign images and noisy copies with per-pair noise levels."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(size=(n, size, size, 3))
    noise = rng.normal(0, rng.uniform(0.01, 0.2, (n, 1, 1, 1)), base.shape)
    return base, np.clip(base + noise, 0, 1)


def ref_ssim(a, b, window, sigma=1.5, c1=1e-4, c2=9e-4):
    """scipy Gaussian filtering truncated to the window, border results discarded."""
    r = window // 2
    f = lambda x: ndimage.gaussian_filter(x, (sigma, sigma, 0), truncate=r / sigma, mode="reflect")
    mu_a, mu_b = f(a), f(b)
    va, vb, cov = f(a * a) - mu_a ** 2, f(b * b) - mu_b ** 2, f(a * b) - mu_a * mu_b
    s = (2 * mu_a * mu_b + c1) * (2 * cov + c2) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
    return s[r:s.shape[0] - r, r:s.shape[1] - r].mean()


def ref_ms_ssim(a, b, scales, weights, window=11, sigma=1.5):
    value = 1.0
    for k in range(scales):
        if k:
            blur = lambda x: ndimage.gaussian_filter(x, (sigma, sigma, 0), truncate=(window // 2) / sigma,
                                                     mode="reflect")[::2, ::2]
            a, b = blur(a), blur(b)
        side = min(a.shape[:2])
        win = min(window, side if side % 2 else side - 1)
        value *= max(0.0, ref_ssim(a, b, win, sigma)) ** weights[k]
    return value


def brute_ssim(a, b, window, sigma=1.5, c1=1e-4, c2=9e-4):
    r = window // 2
    x = np.arange(-r, r + 1)
    g1 = np.exp(-0.5 * (x / sigma) ** 2)
    w = np.outer(g1, g1)
    w /= w.sum()
    vals = []
    for c in range(a.shape[2]):
        for i in range(a.shape[0] - window + 1):
            for j in range(a.shape[1] - window + 1):
                pa, pb = a[i:i + window, j:j + window, c], b[i:i + window, j:j + window, c]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va, vb = (w * (pa - ma) ** 2).sum(), (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))
