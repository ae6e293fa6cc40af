import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ondevice_backdoor.attack import (NOISE, PATCH, STEGO, BaselineTriggerSpec, PoisonConfig, activate_backdoor,
                                      apply_baseline_trigger, patch_region, poison_dataset, select_poison_indices,
                                      train_backdoor, trigger_function)
from ondevice_backdoor.data import ImageSet, load_png
from ondevice_backdoor.errors import InsufficientEligibleSamples, PatchTooLarge, ProvenanceMismatch
from ondevice_backdoor.metrics import attack_success_rate, benign_accuracy
from ondevice_backdoor.stego import encode, string_to_bits
from ondevice_backdoor.training import TrainSchedule, desk_cnn, fit


def _patch():
    return BaselineTriggerSpec.make_patch()


def test_poison_count_and_target_exclusion(tiny_signs):
    cfg = PoisonConfig(trigger_kind=PATCH, poison_rate=0.1, seed=3)
    pd = poison_dataset(tiny_signs, cfg, baseline=_patch())
    assert len(pd.poisoned_index) == round(0.1 * len(tiny_signs)) == 20
    assert (pd.original_labels != 0).all() and (pd.poisoned_labels == 0).all()
    assert len(pd) == len(tiny_signs)
    assert sorted(np.concatenate([pd.benign_index, pd.poisoned_index])) == list(range(len(tiny_signs)))


def test_selection_is_seeded():
    labels = np.arange(1000) % 10
    a = select_poison_indices(labels, PoisonConfig(seed=1))
    assert np.array_equal(a, select_poison_indices(labels, PoisonConfig(seed=1)))
    assert not np.array_equal(a, select_poison_indices(labels, PoisonConfig(seed=2)))


@given(st.integers(10, 400), st.floats(0.01, 0.5), st.integers(0, 4), st.integers(0, 1000))
def test_selection_properties(n, rate, target, seed):
    labels = np.arange(n) % 5
    cfg = PoisonConfig(target_label=target, poison_rate=rate, seed=seed)
    k = int(round(rate * n))
    if k < 1:
        with pytest.raises(ValueError):
            select_poison_indices(labels, cfg)
        return
    if k > int((labels != target).sum()):
        with pytest.raises(InsufficientEligibleSamples):
            select_poison_indices(labels, cfg)
        return
    idx = select_poison_indices(labels, cfg)
    assert len(idx) == k == len(set(idx.tolist()))
    assert (labels[idx] != target).all()


def test_insufficient_eligible():
    with pytest.raises(InsufficientEligibleSamples):
        select_poison_indices(np.array([0] * 9 + [1]), PoisonConfig(poison_rate=0.5))


@pytest.mark.parametrize("rate", [0.0, 1.0, -0.1])
def test_poison_rate_bounds(rate):
    with pytest.raises(ValueError):
        PoisonConfig(poison_rate=rate)


def test_patch_trigger_geometry(rng):
    x = rng.uniform(0, 0.5, size=(2, 32, 32, 3)).astype(np.float32)
    out = apply_baseline_trigger(x, _patch())
    assert (out[:, 28:, 28:] == 1.0).all()
    np.testing.assert_array_equal(out[:, :28], x[:, :28])
    np.testing.assert_array_equal(out[:, :, :28], x[:, :, :28])
    rows, cols = patch_region((32, 32, 3), BaselineTriggerSpec.make_patch(3, "upper-left"))
    assert (rows, cols) == (slice(0, 3), slice(0, 3))
    with pytest.raises(PatchTooLarge):
        apply_baseline_trigger(x, BaselineTriggerSpec.make_patch(33))


def test_noise_trigger_is_fixed_and_bounded(rng):
    spec = BaselineTriggerSpec.make_noise((32, 32, 3), seed=4)
    assert set(np.unique(spec.noise)) == {-1.0, 1.0}
    # constant over 4x4 blocks
    assert (spec.noise[:4, :4] == spec.noise[0, 0]).all()
    x = rng.uniform(0.1, 0.9, size=(3, 32, 32, 3)).astype(np.float32)
    d = apply_baseline_trigger(x, spec) - x
    np.testing.assert_allclose(np.abs(d), 8 / 255, atol=1e-6)
    np.testing.assert_allclose(d[0], d[1], atol=1e-6)  # sample agnostic
    np.testing.assert_array_equal(spec.noise, BaselineTriggerSpec.make_noise((32, 32, 3), seed=4).noise)


def test_trigger_function_requires_matching_inputs():
    with pytest.raises(ValueError):
        trigger_function(PoisonConfig(trigger_kind=STEGO))
    with pytest.raises(ValueError):
        trigger_function(PoisonConfig(trigger_kind=NOISE), baseline=_patch())


def test_stego_poisoning_is_sample_specific(small_signs, tiny_generator):
    data = small_signs.subset(np.arange(200))
    pd = poison_dataset(data, PoisonConfig(seed=0), generator=tiny_generator)
    assert pd.trigger["generator"] == tiny_generator.fingerprint()
    residuals = pd.poisoned_images - data.images[pd.poisoned_index]
    assert len({r.tobytes() for r in residuals}) == len(residuals)
    expected = encode(tiny_generator, data.images[pd.poisoned_index], string_to_bits("OK", 16)).poisoned_image
    np.testing.assert_array_equal(pd.poisoned_images, expected)


def test_audit_manifest(tmp_path, tiny_signs):
    pd = poison_dataset(tiny_signs, PoisonConfig(trigger_kind=PATCH, seed=9), baseline=_patch())
    pd.save(tmp_path, digest="abc")
    rows = list(csv.DictReader(open(tmp_path / "audit.csv")))
    assert len(rows) == 20
    for row, idx, orig in zip(rows, pd.poisoned_index, pd.original_labels):
        assert int(row["sample_id"]) == idx and int(row["original_label"]) == orig
        assert row["assigned_label"] == "0" and row["trigger_kind"] == PATCH and row["config_digest"] == "abc"
    first = load_png(tmp_path / "poisoned" / f"{pd.poisoned_index[0]:06d}.png")
    np.testing.assert_allclose(first, pd.poisoned_images[0], atol=0.5 / 255 + 1e-6)


def test_poison_is_deterministic(tiny_signs):
    cfg = PoisonConfig(trigger_kind=PATCH, seed=5)
    a, b = poison_dataset(tiny_signs, cfg, baseline=_patch()), poison_dataset(tiny_signs, cfg, baseline=_patch())
    assert np.array_equal(a.poisoned_index, b.poisoned_index)
    assert np.array_equal(a.combined()[0], b.combined()[0])


@pytest.fixture(scope="module")
def patch_backdoor():
    from ondevice_backdoor.data import synthetic_signs
    train = synthetic_signs(1500, seed=21, size=16)
    test = synthetic_signs(300, seed=22, size=16)
    victim = desk_cnn(size=16, seed=0)
    fit(victim, train.images, train.labels, TrainSchedule(epochs=3))
    pd = poison_dataset(train, PoisonConfig(trigger_kind=PATCH, poison_rate=0.1, seed=0), baseline=_patch())
    bd = train_backdoor(victim, pd, TrainSchedule(epochs=6))
    return victim, bd, test


def test_patch_backdoor_learns_trigger(patch_backdoor):
    victim, bd, test = patch_backdoor
    trig = lambda x: apply_baseline_trigger(x, _patch())
    assert attack_success_rate(bd.model, test.images, test.labels, trig, 0) > 80
    assert attack_success_rate(victim, test.images, test.labels, trig, 0) < 30
    assert benign_accuracy(bd.model, test.images, test.labels) > 60
    assert len(bd.history) == 6 and bd.provenance["poison"]["trigger_kind"] == PATCH


def test_backdoor_training_leaves_victim_untouched(patch_backdoor):
    victim, bd, _ = patch_backdoor
    assert victim.layers[0].parameter_slots["kernel"].value is not bd.model.layers[0].parameter_slots["kernel"].value
    assert not np.array_equal(victim.layers[0].parameter_slots["kernel"].value,
                              bd.model.layers[0].parameter_slots["kernel"].value)


def test_activate_backdoor(patch_backdoor):
    _, bd, test = patch_backdoor
    pool = test.images[test.labels != 0][:20]
    preds = activate_backdoor(bd, pool, baseline=_patch())
    assert preds.shape == (20,)
    assert isinstance(activate_backdoor(bd, pool[0], baseline=_patch()), int)
    with pytest.raises(ValueError):
        activate_backdoor(bd, pool)


def test_provenance_mismatch_warns(small_signs, tiny_generator):
    data = small_signs.subset(np.arange(100))
    victim = desk_cnn(size=16, seed=0)
    pd = poison_dataset(data, PoisonConfig(seed=0), generator=tiny_generator)
    bd = train_backdoor(victim, pd, TrainSchedule(epochs=1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        activate_backdoor(bd, data.images[:2], generator=tiny_generator)
    with pytest.warns(ProvenanceMismatch):
        activate_backdoor(bd, data.images[:2], generator=tiny_generator, target_string="NO")


def test_class_count_mismatch(tiny_signs):
    pd = poison_dataset(tiny_signs, PoisonConfig(trigger_kind=PATCH), baseline=_patch())
    with pytest.raises(ValueError):
        train_backdoor(desk_cnn(num_classes=5), pd, TrainSchedule(epochs=1))
    small = ImageSet(tiny_signs.images, tiny_signs.labels % 2, tiny_signs.class_names[:2])
    with pytest.raises(ValueError):
        poison_dataset(small, PoisonConfig(trigger_kind=PATCH, target_label=3), baseline=_patch())


def test_zero_amplitude_noise_is_identity(rng):
    spec = BaselineTriggerSpec.make_noise((8, 8, 3), amplitude=0.0)
    x = rng.uniform(size=(8, 8, 3)).astype(np.float32)
    np.testing.assert_array_equal(apply_baseline_trigger(x, spec), x)


def test_baseline_trigger_is_deterministic(rng):
    x = rng.uniform(size=(32, 32, 3)).astype(np.float32)
    for spec in (_patch(), BaselineTriggerSpec.make_noise((32, 32, 3), seed=1)):
        np.testing.assert_array_equal(apply_baseline_trigger(x, spec), apply_baseline_trigger(x, spec))


def test_thousand_samples_ten_percent():
    labels = np.arange(1000) % 10
    idx = select_poison_indices(labels, PoisonConfig(poison_rate=0.1))
    assert len(idx) == 100


def test_stego_residual_psnr_on_fixture_set(small_signs, tiny_generator):
    # the few-second generator only meets the bound on average; the trained one
    # is held to it pair by pair in the acceptance suite
    from ondevice_backdoor.metrics import MetricsConfig, stealth
    data = small_signs.subset(np.arange(100))
    pd = poison_dataset(data, PoisonConfig(seed=0), generator=tiny_generator)
    summary = stealth(data.images[pd.poisoned_index], pd.poisoned_images, MetricsConfig(scales=2))
    assert summary.mean_psnr >= 20


def test_benign_path_and_successful_trigger(patch_backdoor):
    _, bd, test = patch_backdoor
    clean_pred = bd.model.predict(test.images).argmax(1)
    assert np.mean(clean_pred == test.labels) > 0.6
    pool = test.images[test.labels != 0]
    assert (activate_backdoor(bd, pool, baseline=_patch()) == 0).mean() > 0.8
