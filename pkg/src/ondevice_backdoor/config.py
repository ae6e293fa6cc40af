"""Declarative experiment configuration.

One YAML (or JSON) file drives every command. Unknown keys are fatal, every
default lives in the models below, and the resolved configuration is hashed
into a digest that every artifact carries.

Defaults at a glance:

============================  ===========================================
key                           default
============================  ===========================================
output_dir                    runs
seed                          0 (section seeds left empty inherit it)
attacks                       [stego, patch, noise]
poison.target_string          "OK"
poison.target_label           0
poison.poison_rate            0.10
generator.*                   GeneratorTrainConfig defaults (16-bit secret,
                              perceptual weight 30 ramped in, 10 epochs)
baseline.patch_size           4 (lower-right corner, white fill)
baseline.noise_amplitude      8/255 on 4x4 pixel cells
metrics.scales                3 (32x32 images cannot host five scales)
training.epochs               15 (Adam 1e-3, cosine decay, batch 64)
conversion.n_samples          100
evaluate.n_stealth_pairs      200
evaluate.n_specificity_pairs  1000
evaluate.wrong_secret         "NO" (stego ASR probe with a different secret)
============================  ===========================================
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .attack import CORNERS, TRIGGER_KINDS, PoisonConfig
from .errors import ConfigInvalid, ImageTooSmallForScales
from .inventory.scanner import DEFAULT_SIGNATURES, LABEL_KEYWORDS, MODEL_SUFFIXES
from .metrics import MetricsConfig, scale_windows
from .stego import GeneratorTrainConfig
from .training import TrainSchedule

COMMANDS = ("prepare", "scan", "analyze", "convert", "train-gen", "attack", "evaluate", "report")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=False)


def _checked(section, build):
    """Reuse the domain object's invariants so config errors name the same rule."""
    build()
    return section


class InputsSection(_Strict):
    """Optional overrides; empty entries fall back to upstream command outputs."""
    corpus: Path | None = None  # directory of app packages
    model: Path | None = None  # on-device model file to convert
    labels: Path | None = None  # label file for `model`
    dataset: Path | None = None  # attacker substitute training data
    testset: Path | None = None  # held-out evaluation data
    generator: Path | None = None  # trained generator directory

    @field_validator("*")
    @classmethod
    def _exists(cls, v):
        if v is not None and not Path(v).exists():
            raise ValueError(f"path does not exist: {v}")
        return v


class PrepareSection(_Strict):
    train_size: int = Field(6000, ge=10)
    substitute_size: int = Field(5000, ge=10)
    test_size: int = Field(2000, ge=10)
    image_size: int = Field(32, ge=8)
    num_classes: int = Field(10, ge=2, le=10)
    n_dl_packages: int = Field(5, ge=0)
    n_plain_packages: int = Field(5, ge=0)


class ScanSection(_Strict):
    mode: Literal["all", "any"] = "all"
    signatures: dict[str, list[str]] = Field(
        default_factory=lambda: {s.framework_id: [i.decode() for i in s.identifier_strings]
                                 for s in DEFAULT_SIGNATURES})
    label_keywords: list[str] = Field(default_factory=lambda: list(LABEL_KEYWORDS))
    model_suffixes: dict[str, str] = Field(default_factory=lambda: dict(MODEL_SUFFIXES))


class ConversionSection(_Strict):
    n_samples: int = Field(100, ge=1)
    tolerance: float | None = Field(None, gt=0)  # None: 1e-5 float, 1e-2 quantized
    input_range: tuple[float, float] = (0.0, 1.0)


class PoisonSection(_Strict):
    target_string: str = "OK"
    target_label: int = 0
    poison_rate: float = 0.10
    seed: int | None = None

    def build(self, kind: str) -> PoisonConfig:
        return PoisonConfig(self.target_string, self.target_label, self.poison_rate, kind, self.seed or 0)

    _check = model_validator(mode="after")(lambda self: _checked(self, lambda: self.build(TRIGGER_KINDS[0])))


class GeneratorSection(_Strict):
    message_length: int = 16
    perceptual_weight: float = 30.0
    message_weight: float = 1.0
    ramp_start: float = 0.1
    ramp_end: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    holdout_fraction: float = 0.1
    quantize_noise: bool = True
    seed: int | None = None

    def build(self, image_size) -> GeneratorTrainConfig:
        d = self.model_dump()
        d["seed"] = d["seed"] or 0
        return GeneratorTrainConfig(image_size=tuple(image_size), **d)

    _check = model_validator(mode="after")(lambda self: _checked(self, lambda: self.build((32, 32, 3))))


class BaselineSection(_Strict):
    patch_size: int = Field(4, ge=1)
    corner: str = "lower-right"
    fill_value: float = Field(1.0, ge=0.0, le=1.0)
    noise_amplitude: float = Field(8.0 / 255.0, gt=0.0, le=1.0)
    noise_cell: int = Field(4, ge=1)
    seed: int | None = None

    @field_validator("corner")
    @classmethod
    def _corner(cls, v):
        if v not in CORNERS:
            raise ValueError(f"corner must be one of {CORNERS}")
        return v


class MetricsSection(_Strict):
    max_pixel_value: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    scales: int = 3
    weights: list[float] | None = None
    window_size: int = 11
    sigma: float = 1.5

    def build(self) -> MetricsConfig:
        d = self.model_dump()
        if d["weights"] is not None:
            d["weights"] = tuple(d["weights"])
        return MetricsConfig(**d)

    _check = model_validator(mode="after")(lambda self: _checked(self, self.build))


class TrainingSection(_Strict):
    epochs: int = 15
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    lr_schedule: str = "cosine"
    seed: int | None = None

    def build(self) -> TrainSchedule:
        d = self.model_dump()
        d["seed"] = d["seed"] or 0
        return TrainSchedule(**d)

    _check = model_validator(mode="after")(lambda self: _checked(self, self.build))


class EvaluateSection(_Strict):
    n_stealth_pairs: int = Field(200, ge=1)
    n_specificity_pairs: int = Field(1000, ge=2)
    wrong_secret: str = Field("NO", min_length=1)  # robustness probe for the stego backdoor


class ExperimentConfig(_Strict):
    output_dir: Path = Path("runs")
    seed: int = 0
    stages: list[Literal[COMMANDS]] = Field(default_factory=lambda: list(COMMANDS))  # type: ignore[valid-type]
    attacks: list[Literal[TRIGGER_KINDS]] = Field(default_factory=lambda: list(TRIGGER_KINDS))  # type: ignore[valid-type]
    inputs: InputsSection = Field(default_factory=InputsSection)
    prepare: PrepareSection = Field(default_factory=PrepareSection)
    scan: ScanSection = Field(default_factory=ScanSection)
    conversion: ConversionSection = Field(default_factory=ConversionSection)
    poison: PoisonSection = Field(default_factory=PoisonSection)
    generator: GeneratorSection = Field(default_factory=GeneratorSection)
    baseline: BaselineSection = Field(default_factory=BaselineSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    victim_training: TrainingSection = Field(
        default_factory=lambda: TrainingSection(epochs=6, lr_schedule="constant"))
    evaluate: EvaluateSection = Field(default_factory=EvaluateSection)

    @model_validator(mode="after")
    def _resolve(self):
        # empty section seeds inherit the experiment seed
        for section in (self.poison, self.generator, self.baseline, self.training, self.victim_training):
            if section.seed is None:
                section.seed = self.seed
        if len(set(self.attacks)) != len(self.attacks):
            raise ValueError("attacks must not repeat")
        if self.poison.target_label >= self.prepare.num_classes:
            raise ValueError(f"poison.target_label {self.poison.target_label} is not below "
                             f"prepare.num_classes={self.prepare.num_classes}")
        if self.evaluate.wrong_secret == self.poison.target_string:
            raise ValueError("evaluate.wrong_secret must differ from poison.target_string")
        side = self.prepare.image_size
        try:
            scale_windows((side, side), self.metrics.build())
        except ImageTooSmallForScales as exc:
            raise ValueError(f"metrics: {exc}; lower metrics.scales") from None
        return self

    # -- derived ---------------------------------------------------------

    def canonical(self) -> dict:
        return json.loads(self.model_dump_json())

    @property
    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def stage_dir(self, command: str) -> Path:
        return Path(self.output_dir) / command


def _messages(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"]
        if e["type"] == "extra_forbidden":
            msg = f"unknown key '{e['loc'][-1]}'"
        out.append(f"{where}: {msg.removeprefix('Value error, ')}")
    return out


def _rebase(raw: dict, base: Path) -> dict:
    """Resolve relative input paths against the config file's directory."""
    inputs = raw.get("inputs")
    if isinstance(inputs, dict):
        for k, v in list(inputs.items()):
            if isinstance(v, str) and not Path(v).is_absolute():
                inputs[k] = str(base / v)
    out = raw.get("output_dir")
    if isinstance(out, str) and not Path(out).is_absolute():
        raw["output_dir"] = str(base / out)
    return raw


def validate_config(raw: str | dict | None = None, base_dir=None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse configuration text (YAML or JSON) into a resolved config.

    Raises ConfigInvalid with one message per offending field.
    """
    if raw is None or isinstance(raw, dict):
        data = dict(raw or {})
    else:
        try:
            data = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"not valid YAML: {exc}") from exc
        if data is None:
            data = {}
    if not isinstance(data, dict):
        raise ConfigInvalid("configuration must be a mapping at the top level")
    data = dict(data)
    if base_dir is not None:
        data = _rebase(data, Path(base_dir))
    # command-line overrides win and are not rebased
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigInvalid(_messages(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    if path is None:
        return validate_config(None, overrides=overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigInvalid(f"config file not found: {p}")
    return validate_config(p.read_text(), base_dir=p.parent, overrides=overrides)
