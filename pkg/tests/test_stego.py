import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ondevice_backdoor.errors import EmptySecret, ShapeMismatch
from ondevice_backdoor.stego import (GeneratorTrainConfig, SecretMessage, bit_accuracy, bits_to_string,
                                     build_generator, decode, encode, string_to_bits, train_generator)


def test_ok_secret_bits():
    # 'O' = 0x4F, 'K' = 0x4B, most significant bit first
    assert string_to_bits("OK", 16).bits == (0, 1, 0, 0, 1, 1, 1, 1, 0, 1, 0, 0, 1, 0, 1, 1)


def test_padding_and_truncation():
    assert string_to_bits("A", 16).bits[8:] == (0,) * 8
    with pytest.warns(UserWarning):
        assert bits_to_string(string_to_bits("ABC", 16)) == "AB"
    with pytest.raises(EmptySecret):
        string_to_bits("", 16)
    with pytest.raises(ValueError):
        string_to_bits("A", 4)
    with pytest.raises(ValueError):
        SecretMessage((0, 2))


@given(st.text(st.characters(min_codepoint=1, max_codepoint=255), min_size=1, max_size=8))
def test_bits_round_trip(text):
    assert bits_to_string(string_to_bits(text, 8 * len(text))) == text


def test_perceptual_weight_ramp():
    cfg = GeneratorTrainConfig(perceptual_weight=30, ramp_start=0.1, ramp_end=0.5)
    assert [cfg.perceptual_weight_at(s, 100) for s in (0, 9, 10, 30, 50, 99)] == \
        pytest.approx([0, 0, 0, 15, 30, 30])
    with pytest.raises(ValueError):
        GeneratorTrainConfig(ramp_start=0.6, ramp_end=0.5)
    with pytest.raises(ValueError):
        GeneratorTrainConfig(message_weight=0)


def test_encode_shapes_and_clamp(rng):
    gen = build_generator(GeneratorTrainConfig(image_size=(16, 16, 3), message_length=8))
    x = rng.uniform(size=(5, 16, 16, 3)).astype(np.float32)
    res = encode(gen, x, string_to_bits("O", 8))
    assert res.poisoned_image.shape == x.shape
    assert res.poisoned_image.min() >= 0 and res.poisoned_image.max() <= 1
    np.testing.assert_allclose(res.poisoned_image, x + res.residual, atol=1e-6)
    single = encode(gen, x[0], string_to_bits("O", 8))
    np.testing.assert_allclose(single.poisoned_image, res.poisoned_image[0], atol=1e-6)
    bits, conf = decode(gen, x)
    assert bits.shape == (5, 8) and ((conf >= 0) & (conf <= 1)).all()
    assert set(np.unique(bits)) <= {0, 1}


def test_encode_rejects_mismatched_inputs(rng):
    gen = build_generator(GeneratorTrainConfig(image_size=(16, 16, 3), message_length=8))
    with pytest.raises(ShapeMismatch):
        encode(gen, rng.uniform(size=(8, 8, 3)), string_to_bits("O", 8))
    with pytest.raises(ShapeMismatch):
        encode(gen, rng.uniform(size=(16, 16, 3)), string_to_bits("OK", 16))


def test_bit_accuracy():
    assert bit_accuracy(np.array([1, 0, 1, 1]), SecretMessage((1, 0, 0, 1))) == 0.75


def test_short_training_learns_above_chance(tiny_generator):
    h = tiny_generator.history
    assert len(h) == 4
    assert h[-1]["message_bce"] < h[0]["message_bce"]
    assert h[-1]["heldout_bit_accuracy"] > 0.58
    assert math.isfinite(h[-1]["heldout_psnr"])


def test_training_is_deterministic(small_signs):
    cfg = GeneratorTrainConfig(image_size=(16, 16, 3), epochs=1, batch_size=64)
    a = train_generator(small_signs.images[:128], cfg)
    b = train_generator(small_signs.images[:128], cfg)
    assert a.fingerprint() == b.fingerprint()


def test_training_rejects_wrong_shape(small_signs):
    with pytest.raises(ShapeMismatch):
        train_generator(small_signs.images, GeneratorTrainConfig())


def test_save_load_preserves_fingerprint(tiny_generator, tmp_path, small_signs):
    tiny_generator.save(tmp_path / "gen")
    from ondevice_backdoor.stego import TriggerGenerator
    loaded = TriggerGenerator.load(tmp_path / "gen")
    assert loaded.fingerprint() == tiny_generator.fingerprint()
    assert loaded.config == tiny_generator.config and loaded.history == tiny_generator.history
    secret = string_to_bits("OK", 16)
    x = small_signs.images[:4]
    np.testing.assert_array_equal(encode(loaded, x, secret).poisoned_image,
                                  encode(tiny_generator, x, secret).poisoned_image)


def test_single_character_codes():
    assert string_to_bits("A", 8).bits == (0, 1, 0, 0, 0, 0, 0, 1)
    assert string_to_bits("A", 16).bits == (0, 1, 0, 0, 0, 0, 0, 1) + (0,) * 8
    with pytest.warns(UserWarning, match="truncated"):
        assert string_to_bits("AB", 8).bits == (0, 1, 0, 0, 0, 0, 0, 1)


def test_encode_is_deterministic_and_sample_specific(tiny_generator, small_signs):
    secret = string_to_bits("OK", 16)
    x = small_signs.images[:2]
    a, b = encode(tiny_generator, x, secret), encode(tiny_generator, x, secret)
    np.testing.assert_array_equal(a.poisoned_image, b.poisoned_image)
    assert not np.array_equal(a.residual[0], a.residual[1])


def test_confidence_length_matches_message(tiny_generator, small_signs):
    bits, conf = decode(tiny_generator, small_signs.images[0])
    assert bits.shape == conf.shape == (16,)
