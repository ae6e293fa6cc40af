"""Effectiveness and stealth metrics: BA, ASR, BAC, PSNR, SSIM and MS-SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptyPool, EmptyTestset, ImageTooSmallForScales, ShapeMismatch,
                     WindowTooLarge)

INF = math.inf  # PSNR of identical images
DEFAULT_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _normalized(weights) -> tuple[float, ...]:
    w = np.asarray(weights, np.float64)
    return tuple(float(v) for v in w / w.sum())


@dataclass(frozen=True)
class MetricsConfig:
    max_pixel_value: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    scales: int = 5
    weights: tuple[float, ...] | None = None  # None: leading entries of DEFAULT_WEIGHTS, renormalized
    window_size: int = 11
    sigma: float = 1.5
    weights_resolved: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.max_pixel_value <= 0:
            raise ValueError("max_pixel_value must be positive")
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be a positive odd integer")
        if self.weights is None:
            if self.scales > len(DEFAULT_WEIGHTS):
                raise ValueError(f"no default weights for {self.scales} scales")
            w = _normalized(DEFAULT_WEIGHTS[:self.scales])
        else:
            w = tuple(float(v) for v in self.weights)
            if len(w) != self.scales or min(w) < 0:
                raise ValueError("weights must be K non-negative reals")
            if abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"weights sum to {sum(w)!r}, expected 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("C1 and C2 must be positive")
        object.__setattr__(self, "weights_resolved", w)

    @property
    def c1(self) -> float:
        return (self.k1 * self.max_pixel_value) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.max_pixel_value) ** 2

    def to_dict(self) -> dict:
        return {"max_pixel_value": self.max_pixel_value, "C1": self.c1, "C2": self.c2,
                "scales": self.scales, "weights": list(self.weights_resolved),
                "window_size": self.window_size, "sigma": self.sigma}


DESK_SCALE = MetricsConfig(scales=3)  # 32x32 inputs cannot support five scales


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(x_b, x_p, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; INF when the images are identical."""
    a, b = _pair(x_b, x_p)
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return INF
    return 10.0 * math.log10(max_value ** 2 / mse)


def _gauss_1d(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable correlation over the two leading axes, 'valid' region only."""
    n = len(k)
    h, w = img.shape[:2]
    rows = sum(k[i] * img[i:h - n + 1 + i] for i in range(n))
    return sum(k[j] * rows[:, j:w - n + 1 + j] for j in range(n))


def _ssim_map(a: np.ndarray, b: np.ndarray, cfg: MetricsConfig, window: int) -> np.ndarray:
    k = _gauss_1d(window, cfg.sigma)
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a ** 2
    var_b = _filter_valid(b * b, k) - mu_b ** 2
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    c1, c2 = cfg.c1, cfg.c2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
            / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))


def ssim_single_scale(x_b, x_p, config: MetricsConfig = MetricsConfig(), window: int | None = None) -> float:
    """Mean Gaussian-windowed SSIM; colour channels are averaged. May be negative."""
    a, b = _pair(x_b, x_p)
    window = config.window_size if window is None else window
    if a.ndim not in (2, 3):
        raise ShapeMismatch(f"expected HxW or HxWxC image, got {a.shape}")
    if min(a.shape[:2]) < window:
        raise WindowTooLarge(f"{window}x{window} window does not fit a {a.shape[0]}x{a.shape[1]} image")
    return float(np.mean(_ssim_map(a, b, config, window)))


def downsample(img: np.ndarray, sigma: float = 1.5, size: int = 11) -> np.ndarray:
    """Gaussian low-pass (symmetric borders) followed by 2x decimation."""
    k = _gauss_1d(size, sigma)
    r = size // 2
    pad = [(r, r), (r, r)] + [(0, 0)] * (img.ndim - 2)
    # symmetric padding can only mirror up to the image extent
    padded = img
    while any(p[0] > 0 for p in pad):
        step = [(min(p[0], s), min(p[1], s)) for p, s in zip(pad, padded.shape)]
        padded = np.pad(padded, step, mode="symmetric")
        pad = [(p[0] - s[0], p[1] - s[1]) for p, s in zip(pad, step)]
    return _filter_valid(padded, k)[::2, ::2]


def scale_windows(shape, config: MetricsConfig) -> list[int]:
    """Window size used at each scale: the configured window, shrunk to the
    largest odd size that fits once a scale gets smaller than it."""
    h, w = shape[:2]
    wins = []
    for _ in range(config.scales):
        side = min(h, w)
        if side < (config.window_size + 1) // 2:
            raise ImageTooSmallForScales(
                f"{shape[0]}x{shape[1]} image is too small for {config.scales} scales "
                f"with a {config.window_size}x{config.window_size} window")
        wins.append(min(config.window_size, side if side % 2 else side - 1))
        h, w = (h + 1) // 2, (w + 1) // 2
    return wins


def ms_ssim(x_b, x_p, config: MetricsConfig = MetricsConfig()) -> float:
    """Weighted product of per-scale SSIM (each clamped at 0), in [0, 1]."""
    a, b = _pair(x_b, x_p)
    wins = scale_windows(a.shape, config)
    value = 1.0
    for k, (win, weight) in enumerate(zip(wins, config.weights_resolved)):
        if k:
            a = downsample(a, config.sigma, config.window_size)
            b = downsample(b, config.sigma, config.window_size)
        s = max(0.0, ssim_single_scale(a, b, config, win))
        value *= s ** weight
    return float(min(1.0, value))


def _scores(model, images) -> np.ndarray:
    if hasattr(model, "predict"):
        return np.asarray(model.predict(np.asarray(images, np.float32)))
    return np.asarray(model(np.asarray(images, np.float32)))


def benign_accuracy(model, images, labels) -> float:
    """Percentage of test samples whose argmax prediction equals the label."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyTestset("benign accuracy needs at least one sample")
    pred = _scores(model, images).reshape(len(labels), -1).argmax(axis=1)
    return float(np.mean(pred == labels) * 100.0)


def attack_pool(labels, target: int) -> np.ndarray:
    """Indices eligible for ASR: samples whose true class is not the target."""
    return np.flatnonzero(np.asarray(labels) != target)


def attack_success_rate(model, images, labels, trigger, target: int) -> float:
    """Percentage of triggered non-target samples classified as `target`.

    `trigger` maps a batch of benign images to triggered ones.
    """
    idx = attack_pool(labels, target)
    if len(idx) == 0:
        raise EmptyPool("no samples with a true label other than the target")
    triggered = trigger(np.asarray(images)[idx])
    pred = _scores(model, triggered).reshape(len(idx), -1).argmax(axis=1)
    return float(np.mean(pred == target) * 100.0)


def benign_accuracy_change(ba_backdoor: float, ba_normal: float) -> float:
    return float(ba_backdoor) - float(ba_normal)


@dataclass
class StealthSummary:
    mean_psnr: float
    min_psnr: float
    mean_ms_ssim: float
    min_ms_ssim: float
    pairs: int
    infinite_psnr: int  # identical pairs, left out of the PSNR mean


def stealth(benign, poisoned, config: MetricsConfig = DESK_SCALE) -> StealthSummary:
    """PSNR / MS-SSIM statistics over aligned batches of image pairs."""
    benign, poisoned = np.asarray(benign), np.asarray(poisoned)
    if benign.shape != poisoned.shape:
        raise ShapeMismatch(f"batch shapes differ: {benign.shape} vs {poisoned.shape}")
    ps = [psnr(a, b, config.max_pixel_value) for a, b in zip(benign, poisoned)]
    ms = [ms_ssim(a, b, config) for a, b in zip(benign, poisoned)]
    finite = [p for p in ps if p != INF]
    return StealthSummary(float(np.mean(finite)) if finite else INF,
                          float(min(ps)) if ps else INF,
                          float(np.mean(ms)) if ms else 1.0, float(min(ms)) if ms else 1.0,
                          len(ps), len(ps) - len(finite))
