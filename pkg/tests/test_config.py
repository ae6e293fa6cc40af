import json

import pytest
from hypothesis import given, strategies as st

from ondevice_backdoor.config import COMMANDS, ExperimentConfig, load_config, validate_config
from ondevice_backdoor.errors import ConfigInvalid


def _messages(raw, **kw):
    with pytest.raises(ConfigInvalid) as err:
        validate_config(raw, **kw)
    return err.value.messages


def test_defaults():
    cfg = validate_config(None)
    assert cfg.stages == list(COMMANDS) and cfg.attacks == ["stego", "patch", "noise"]
    assert cfg.poison.poison_rate == 0.10 and cfg.poison.target_string == "OK" and cfg.poison.target_label == 0
    assert cfg.training.epochs == 15 and cfg.training.lr_schedule == "cosine"
    assert cfg.metrics.build().scales == 3
    assert cfg.baseline.patch_size == 4 and cfg.baseline.noise_amplitude == pytest.approx(8 / 255)
    assert cfg.evaluate.n_stealth_pairs == 200 and cfg.evaluate.n_specificity_pairs == 1000


def test_unknown_key_is_fatal():
    assert _messages("poison:\n  rate: 0.2\n") == ["poison.rate: unknown key 'rate'"]
    assert _messages({"bogus": 1}) == ["bogus: unknown key 'bogus'"]


def test_domain_rules_are_reported_per_section():
    assert _messages({"poison": {"poison_rate": 0}}) == ["poison: poison_rate must lie in (0, 1)"]
    assert _messages({"metrics": {"scales": 7}}) == ["metrics: no default weights for 7 scales"]
    assert _messages({"training": {"epochs": 0}}) == \
        ["training: epochs, batch_size and learning_rate must be positive"]
    assert "not below prepare.num_classes=5" in _messages({"prepare": {"num_classes": 5},
                                                           "poison": {"target_label": 7}})[0]
    assert _messages({"inputs": {"corpus": "/nope"}}) == ["inputs.corpus: path does not exist: /nope"]
    assert any("attacks" in m or "repeat" in m for m in _messages({"attacks": ["patch", "patch"]}))


def test_malformed_text():
    assert "not valid YAML" in _messages("a: [1,\n")[0]
    assert "mapping" in _messages("- 1\n- 2\n")[0]


def test_section_seeds_inherit_experiment_seed():
    cfg = validate_config({"seed": 7, "training": {"seed": 3}})
    assert cfg.poison.seed == 7 and cfg.generator.seed == 7 and cfg.training.seed == 3


def test_digest_is_stable_and_sensitive():
    a = validate_config("seed: 1\npoison: {poison_rate: 0.2}\n")
    b = validate_config({"poison": {"poison_rate": 0.2}, "seed": 1})
    assert a.digest == b.digest and len(a.digest) == 64
    assert a.digest != validate_config({"seed": 1}).digest
    assert json.loads(json.dumps(a.canonical())) == a.canonical()


def test_overrides_and_relative_paths(tmp_path):
    (tmp_path / "corpus").mkdir()
    f = tmp_path / "exp.yaml"
    f.write_text("output_dir: out\nseed: 1\ninputs: {corpus: corpus}\n")
    cfg = load_config(f)
    assert cfg.output_dir == tmp_path / "out" and cfg.inputs.corpus == tmp_path / "corpus"
    cfg = load_config(f, {"seed": 9, "output_dir": "/abs/elsewhere"})
    assert cfg.seed == 9 and str(cfg.output_dir) == "/abs/elsewhere"
    assert cfg.stage_dir("scan") == cfg.output_dir / "scan"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "absent.yaml")


@given(st.floats(0.001, 0.999), st.integers(0, 2 ** 31))
def test_valid_rates_round_trip(rate, seed):
    cfg = validate_config({"poison": {"poison_rate": rate}, "seed": seed})
    again = ExperimentConfig.model_validate(cfg.canonical())
    assert again.digest == cfg.digest
    assert cfg.poison.build("patch").poison_rate == rate


def test_scales_must_fit_image_size():
    msg = _messages({"prepare": {"image_size": 16}})[0]
    assert "16x16 image is too small for 3 scales" in msg
    assert validate_config({"prepare": {"image_size": 16}, "metrics": {"scales": 2}}).metrics.scales == 2


def test_wrong_secret_must_differ():
    assert "wrong_secret" in _messages({"evaluate": {"wrong_secret": "OK"}})[0]
