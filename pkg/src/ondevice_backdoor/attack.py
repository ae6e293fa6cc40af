"""Data poisoning, backdoor fine-tuning and trigger activation.

Three trigger kinds are supported: the steganographic one produced by a
trained generator, and two sample-agnostic baselines (a solid corner patch
and a fixed low-amplitude noise pattern).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conversion.model import TrainableModel
from .data import ImageSet, save_png
from .errors import InsufficientEligibleSamples, PatchTooLarge, ProvenanceMismatch
from .stego import TriggerGenerator, encode, string_to_bits
from .training import TrainSchedule, fit

STEGO = "stego"
PATCH = "patch"
NOISE = "noise"
TRIGGER_KINDS = (STEGO, PATCH, NOISE)
CORNERS = ("lower-right", "lower-left", "upper-right", "upper-left")


@dataclass(frozen=True)
class PoisonConfig:
    target_string: str = "OK"
    target_label: int = 0
    poison_rate: float = 0.10
    trigger_kind: str = STEGO
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.poison_rate < 1.0:
            raise ValueError("poison_rate must lie in (0, 1)")
        if self.trigger_kind not in TRIGGER_KINDS:
            raise ValueError(f"trigger_kind must be one of {TRIGGER_KINDS}")
        if self.target_label < 0:
            raise ValueError("target_label must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BaselineTriggerSpec:
    kind: str
    patch_size: int = 4
    corner: str = "lower-right"
    fill_value: float = 1.0
    noise: np.ndarray | None = None  # values in [-1, 1]
    amplitude: float = 8.0 / 255.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (PATCH, NOISE):
            raise ValueError("baseline kind must be 'patch' or 'noise'")
        if self.corner not in CORNERS:
            raise ValueError(f"corner must be one of {CORNERS}")
        if self.kind == NOISE and self.noise is None:
            raise ValueError("noise trigger needs a noise tensor (use BaselineTriggerSpec.make_noise)")

    @classmethod
    def make_patch(cls, size: int = 4, corner: str = "lower-right", fill_value: float = 1.0):
        return cls(PATCH, patch_size=size, corner=corner, fill_value=fill_value)

    @classmethod
    def make_noise(cls, shape, amplitude: float = 8.0 / 255.0, seed: int = 0, cell: int = 4):
        """Random signs on a grid of `cell` x `cell` pixel blocks.

        Signs give the most energy inside the L-inf budget; blocks survive
        the victim's pooling far better than per-pixel noise.
        """
        h, w, c = (int(v) for v in shape)
        grid = np.random.default_rng(seed).choice(np.array([-1.0, 1.0], np.float32),
                                                  size=(-(-h // cell), -(-w // cell), c))
        noise = np.kron(grid, np.ones((cell, cell, 1), np.float32))[:h, :w]
        return cls(NOISE, noise=noise, amplitude=amplitude, seed=seed)

    def describe(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == PATCH:
            d.update(patch_size=self.patch_size, corner=self.corner, fill_value=self.fill_value)
        else:
            d.update(amplitude=self.amplitude, noise_shape=list(self.noise.shape))
        return d


def patch_region(shape, spec: BaselineTriggerSpec) -> tuple[slice, slice]:
    h, w = shape[-3], shape[-2]
    k = spec.patch_size
    if k < 1 or k > h or k > w:
        raise PatchTooLarge(f"{k}x{k} patch does not fit a {h}x{w} image")
    rows = slice(h - k, h) if spec.corner.startswith("lower") else slice(0, k)
    cols = slice(w - k, w) if spec.corner.endswith("right") else slice(0, k)
    return rows, cols


def apply_baseline_trigger(image: np.ndarray, spec: BaselineTriggerSpec) -> np.ndarray:
    """Stamp the patch or add the fixed noise; works on one image or a batch."""
    out = np.array(image, dtype=np.float32, copy=True)
    if spec.kind == PATCH:
        rows, cols = patch_region(out.shape, spec)
        out[..., rows, cols, :] = spec.fill_value
        return out
    if spec.noise.shape != out.shape[-3:]:
        raise ValueError(f"noise shape {spec.noise.shape} does not match image {out.shape[-3:]}")
    return np.clip(out + spec.amplitude * spec.noise, 0.0, 1.0).astype(np.float32)


def trigger_function(config: PoisonConfig, generator: TriggerGenerator | None = None,
                     baseline: BaselineTriggerSpec | None = None):
    """Batch -> triggered batch for the configured kind."""
    if config.trigger_kind == STEGO:
        if generator is None:
            raise ValueError("stego trigger needs a trained generator")
        secret = string_to_bits(config.target_string, generator.config.message_length)
        return lambda images: encode(generator, images, secret).poisoned_image
    if baseline is None or baseline.kind != config.trigger_kind:
        raise ValueError(f"{config.trigger_kind} trigger needs a matching BaselineTriggerSpec")
    return lambda images: apply_baseline_trigger(images, baseline)


@dataclass
class PoisonedDataset:
    benign_images: np.ndarray
    benign_labels: np.ndarray
    benign_index: np.ndarray
    poisoned_images: np.ndarray
    poisoned_labels: np.ndarray
    original_labels: np.ndarray
    poisoned_index: np.ndarray
    config: PoisonConfig
    class_names: tuple[str, ...] = ()
    trigger: dict = field(default_factory=dict)

    def combined(self) -> tuple[np.ndarray, np.ndarray]:
        """Training view: benign and poisoned samples restored to source order."""
        order = np.argsort(np.concatenate([self.benign_index, self.poisoned_index]), kind="stable")
        x = np.concatenate([self.benign_images, self.poisoned_images])[order]
        y = np.concatenate([self.benign_labels, self.poisoned_labels])[order]
        return x, y

    def __len__(self) -> int:
        return len(self.benign_index) + len(self.poisoned_index)

    def audit_rows(self) -> list[dict]:
        return [{"sample_id": int(i), "original_label": int(o), "assigned_label": int(a),
                 "trigger_kind": self.config.trigger_kind, "seed": self.config.seed}
                for i, o, a in zip(self.poisoned_index, self.original_labels, self.poisoned_labels)]

    def save(self, directory, digest: str = "") -> Path:
        """Poisoned images as PNG plus an audit manifest."""
        d = Path(directory)
        (d / "poisoned").mkdir(parents=True, exist_ok=True)
        for i, img in zip(self.poisoned_index, self.poisoned_images):
            save_png(d / "poisoned" / f"{int(i):06d}.png", img)
        with open(d / "audit.csv", "w", newline="") as f:
            fields_ = ["sample_id", "original_label", "assigned_label", "trigger_kind", "seed",
                       "config_digest"]
            w = csv.DictWriter(f, fieldnames=fields_)
            w.writeheader()
            for row in self.audit_rows():
                w.writerow({**row, "config_digest": digest})
        return d


def select_poison_indices(labels: np.ndarray, config: PoisonConfig) -> np.ndarray:
    labels = np.asarray(labels)
    n_poison = int(round(config.poison_rate * len(labels)))
    if n_poison < 1:
        raise ValueError(f"poison rate {config.poison_rate} yields no poisoned samples for N={len(labels)}")
    eligible = np.flatnonzero(labels != config.target_label)
    if len(eligible) < n_poison:
        raise InsufficientEligibleSamples(
            f"{n_poison} poisoned samples requested, only {len(eligible)} have a label other than "
            f"{config.target_label}")
    rng = np.random.default_rng(config.seed)
    return np.sort(rng.choice(eligible, size=n_poison, replace=False))


def poison_dataset(dataset: ImageSet, config: PoisonConfig, generator: TriggerGenerator | None = None,
                   baseline: BaselineTriggerSpec | None = None) -> PoisonedDataset:
    """Trigger and relabel round(p*N) randomly chosen non-target samples."""
    if config.target_label >= dataset.num_classes:
        raise ValueError(f"target label {config.target_label} >= {dataset.num_classes} classes")
    idx = select_poison_indices(dataset.labels, config)
    rest = np.setdiff1d(np.arange(len(dataset)), idx)
    apply = trigger_function(config, generator, baseline)
    triggered = apply(dataset.images[idx]) if len(idx) else dataset.images[idx]
    if config.trigger_kind == STEGO:
        info = {"kind": STEGO, "generator": generator.fingerprint(),
                "message_length": generator.config.message_length}
    else:
        info = baseline.describe()
    return PoisonedDataset(
        dataset.images[rest], dataset.labels[rest].copy(), rest,
        np.asarray(triggered, np.float32), np.full(len(idx), config.target_label, np.int64),
        dataset.labels[idx].copy(), idx, config, dataset.class_names, info)


@dataclass
class BackdoorModel:
    model: TrainableModel
    config: PoisonConfig
    schedule: TrainSchedule
    trigger: dict
    history: list[dict] = field(default_factory=list)

    @property
    def provenance(self) -> dict:
        return {"poison": self.config.to_dict(), "schedule": self.schedule.to_dict(),
                "trigger": self.trigger}


def train_backdoor(victim: TrainableModel, data: PoisonedDataset, schedule: TrainSchedule,
                   callback=None) -> BackdoorModel:
    """Fine-tune a copy of the victim on both partitions."""
    model = victim.clone()
    out_dim = model.predict(data.benign_images[:1]).reshape(1, -1).shape[1]
    if data.class_names and out_dim != len(data.class_names):
        raise ValueError(f"victim has {out_dim} outputs, dataset has {len(data.class_names)} classes")
    x, y = data.combined()
    history = fit(model, x, y, schedule, callback)
    return BackdoorModel(model, data.config, schedule, dict(data.trigger), history)


def activate_backdoor(model: BackdoorModel, image: np.ndarray, generator: TriggerGenerator | None = None,
                      target_string: str | None = None,
                      baseline: BaselineTriggerSpec | None = None) -> int | np.ndarray:
    """Predicted class of the triggered image(s)."""
    cfg = model.config
    if cfg.trigger_kind == STEGO:
        if generator is None:
            raise ValueError("stego backdoor needs the generator")
        s = cfg.target_string if target_string is None else target_string
        if s != cfg.target_string or generator.fingerprint() != model.trigger.get("generator"):
            warnings.warn("generator or secret differ from the training provenance", ProvenanceMismatch,
                          stacklevel=2)
        triggered = encode(generator, image, string_to_bits(s, generator.config.message_length)).poisoned_image
    else:
        if baseline is None:
            raise ValueError("baseline backdoor needs its trigger spec")
        triggered = apply_baseline_trigger(image, baseline)
    single = np.asarray(image).ndim == 3
    batch = triggered[None] if single else triggered
    pred = model.model.predict(batch).reshape(len(batch), -1).argmax(axis=1)
    return int(pred[0]) if single else pred
