import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from oracles import brute_ssim, pairs, ref_ms_ssim

from ondevice_backdoor.errors import EmptyPool, EmptyTestset, ImageTooSmallForScales, ShapeMismatch, WindowTooLarge
from ondevice_backdoor.metrics import (DEFAULT_WEIGHTS, DESK_SCALE, INF, MetricsConfig, attack_pool,
                                       attack_success_rate, benign_accuracy, benign_accuracy_change, ms_ssim,
                                       psnr, scale_windows, ssim_single_scale, stealth)


# -- PSNR ------------------------------------------------------------------------------

def test_psnr_uniform_offset_closed_form():
    a = np.full((32, 32, 3), 100 / 255)
    assert psnr(a, a + 16 / 255) == pytest.approx(10 * math.log10(65025 / 256), abs=1e-9)
    assert psnr(a, a + 16 / 255) == pytest.approx(24.05, abs=0.01)
    assert psnr(a * 255, a * 255 + 16, max_value=255) == pytest.approx(24.05, abs=0.01)


def test_psnr_matches_skimage_on_50pairs():
    base, other = pairs(50)
    for a, b in zip(base, other):
        assert abs(psnr(a, b) - peak_signal_noise_ratio(a, b, data_range=1.0)) <= 1e-6


def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(a, a) == INF


def test_psnr_rejects_shape_mismatch_and_bad_range():
    with pytest.raises(ShapeMismatch):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.ones((4, 4)), max_value=0)


# -- SSIM / MS-SSIM -------------------------------------------------------------------------

def test_ssim_matches_skimage():
    base, other = pairs(10)
    for a, b in zip(base, other):
        ref = structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True,
                                    sigma=1.5, use_sample_covariance=False)
        assert abs(ssim_single_scale(a, b) - ref) <= 1e-6


def test_ssim_matches_brute_force_window():
    base, other = pairs(2, size=12, seed=3)
    for a, b in zip(base, other):
        assert ssim_single_scale(a, b, window=7) == pytest.approx(brute_ssim(a, b, 7), abs=1e-10)


def test_ms_ssim_matches_reference_on_50pairs():
    base, other = pairs(50, seed=1)
    for a, b in zip(base, other):
        ref = ref_ms_ssim(a, b, 3, DESK_SCALE.weights_resolved)
        assert abs(ms_ssim(a, b, DESK_SCALE) - ref) <= 1e-4


def test_ms_ssim_five_scales_on_128px_images():
    base, other = pairs(5, size=128, seed=2)
    cfg = MetricsConfig()
    assert cfg.weights_resolved == pytest.approx(DEFAULT_WEIGHTS, abs=1e-4)  # the standard weights sum to 1.0001
    for a, b in zip(base, other):
        assert abs(ms_ssim(a, b, cfg) - ref_ms_ssim(a, b, 5, DEFAULT_WEIGHTS)) <= 1e-4


def test_scale_windows_shrink_at_coarse_scales():
    assert scale_windows((32, 32, 3), DESK_SCALE) == [11, 11, 7]
    assert scale_windows((176, 176), MetricsConfig()) == [11] * 5
    with pytest.raises(ImageTooSmallForScales):
        ms_ssim(np.zeros((32, 32, 3)), np.zeros((32, 32, 3)), MetricsConfig())


def test_window_too_large():
    with pytest.raises(WindowTooLarge):
        ssim_single_scale(np.zeros((8, 8)), np.zeros((8, 8)))


def test_metrics_config_constants():
    cfg = MetricsConfig(max_pixel_value=255)
    assert cfg.c1 == pytest.approx(2.55 ** 2) and cfg.c2 == pytest.approx(7.65 ** 2)
    assert sum(DESK_SCALE.weights_resolved) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        MetricsConfig(scales=6)
    with pytest.raises(ValueError):
        MetricsConfig(scales=2, weights=(0.3, 0.3))
    with pytest.raises(ValueError):
        MetricsConfig(window_size=10)


images = arrays(np.float64, (32, 32, 3), elements=st.floats(0, 1, allow_nan=False, width=32))


@given(images, images)
def test_metrics_are_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)
    assert ssim_single_scale(a, b) == pytest.approx(ssim_single_scale(b, a), abs=1e-12)
    assert ms_ssim(a, b, DESK_SCALE) == pytest.approx(ms_ssim(b, a, DESK_SCALE), abs=1e-12)


@given(images, images)
def test_ms_ssim_in_unit_interval(a, b):
    assert 0.0 <= ms_ssim(a, b, DESK_SCALE) <= 1.0
    assert ms_ssim(a, a, DESK_SCALE) == pytest.approx(1.0, abs=1e-12)


@given(images, st.floats(0.01, 0.2), st.floats(1.2, 3.0))
def test_psnr_decreases_with_noise(a, sigma, factor):
    noise = np.random.default_rng(0).normal(size=a.shape)
    assert psnr(a, a + sigma * noise) > psnr(a, a + factor * sigma * noise)


# -- effectiveness ----------------------------------------------------------------------------

class _Lookup:
    """Classifier that reads its answer from the first pixel."""

    def predict(self, x):
        cls = np.asarray(x)[:, 0, 0, 0].round().astype(int)
        return np.eye(4)[cls]


def test_benign_accuracy_and_asr():
    x = np.zeros((10, 2, 2, 1))
    x[:, 0, 0, 0] = [0, 1, 2, 3, 0, 1, 2, 3, 0, 0]
    labels = np.array([0, 1, 2, 3, 1, 1, 2, 3, 0, 0])
    assert benign_accuracy(_Lookup(), x, labels) == pytest.approx(90.0)
    assert list(attack_pool(labels, 0)) == [1, 2, 3, 4, 5, 6, 7]

    def trig(batch):
        out = batch.copy()
        out[:3, 0, 0, 0] = 0  # three pool images flip; pool image 4 already reads 0
        return out

    assert attack_success_rate(_Lookup(), x, labels, trig, 0) == pytest.approx(400 / 7)


def test_asr_ignores_target_class_samples():
    x = np.zeros((4, 2, 2, 1))
    labels = np.array([0, 0, 1, 2])
    seen = []
    attack_success_rate(_Lookup(), x, labels, lambda b: seen.append(len(b)) or b, 0)
    assert seen == [2]


def test_empty_sets_rejected():
    with pytest.raises(EmptyTestset):
        benign_accuracy(_Lookup(), np.zeros((0, 2, 2, 1)), np.zeros(0))
    with pytest.raises(EmptyPool):
        attack_success_rate(_Lookup(), np.zeros((3, 2, 2, 1)), np.zeros(3, int), lambda b: b, 0)


def test_benign_accuracy_change():
    assert benign_accuracy_change(61.27, 68.07) == pytest.approx(-6.80)
    assert benign_accuracy_change(99.60, 99.00) == pytest.approx(0.60)


def test_random_classifier_asr_near_chance():
    rng = np.random.default_rng(0)

    class Random:
        def predict(self, x):
            return rng.uniform(size=(len(x), 10))

    labels = rng.integers(0, 10, 5000)
    asr = attack_success_rate(Random(), np.zeros((5000, 1, 1, 1)), labels, lambda b: b, 3)
    assert abs(asr - 10.0) < 1.5


def test_stealth_summary_excludes_identical_pairs_from_mean():
    base, other = pairs(3)
    other[1] = base[1]
    s = stealth(base, other)
    assert s.pairs == 3 and s.infinite_psnr == 1
    assert s.mean_psnr == pytest.approx(np.mean([psnr(base[0], other[0]), psnr(base[2], other[2])]))
    assert s.min_ms_ssim <= s.mean_ms_ssim <= 1.0
    with pytest.raises(ShapeMismatch):
        stealth(base, other[:2])


def test_perfect_classifier_and_ratio():
    x = np.zeros((4, 2, 2, 1))
    x[:, 0, 0, 0] = [0, 1, 2, 3]
    assert benign_accuracy(_Lookup(), x, np.array([0, 1, 2, 3])) == 100.0

    class Ninety:
        def predict(self, batch):
            out = np.zeros((len(batch), 4))
            out[:90, 0] = 1
            out[90:, 1] = 1
            return out

    assert attack_success_rate(Ninety(), np.zeros((100, 2, 2, 1)), np.ones(100, int), lambda b: b, 0) == 90.0


def test_identity_values():
    a = np.random.default_rng(0).uniform(size=(32, 32, 3))
    assert ssim_single_scale(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ms_ssim(a, a, DESK_SCALE) == pytest.approx(1.0, abs=1e-12)
    assert benign_accuracy_change(70.0, 70.0) == 0.0


def test_negated_image_ssim_can_be_negative():
    from oracles import ref_ssim
    a = np.random.default_rng(0).uniform(size=(16, 16, 3))
    value = ssim_single_scale(a, 1.0 - a)
    assert value < 0
    assert value == pytest.approx(ref_ssim(a, 1.0 - a, 11), abs=1e-6)
