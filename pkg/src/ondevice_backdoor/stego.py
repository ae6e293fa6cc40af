"""Steganographic trigger generator.

An encoder adds an image-dependent residual that carries a bit string; a
decoder reads the bits back. Both are trained together so that the
residual stays small while the message survives.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DivergedTraining, EmptySecret, ShapeMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SecretMessage:
    bits: tuple[int, ...]
    source_string: str | None = None

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0/1")

    @property
    def length(self) -> int:
        return len(self.bits)

    def array(self) -> np.ndarray:
        return np.asarray(self.bits, np.float32)


def string_to_bits(text: str, length: int) -> SecretMessage:
    """8-bit character codes, most significant bit first, cut or zero-padded."""
    if not text:
        raise EmptySecret("secret string is empty")
    if length < 8:
        raise ValueError("message length must be at least 8 bits")
    raw = text.encode("latin-1")
    bits = [(byte >> (7 - k)) & 1 for byte in raw for k in range(8)]
    if len(bits) > length:
        warnings.warn(f"secret {text!r} truncated to {length} bits", stacklevel=2)
        bits = bits[:length]
    bits += [0] * (length - len(bits))
    return SecretMessage(tuple(bits), text)


def bits_to_string(bits) -> str:
    """Inverse of string_to_bits: whole bytes only, trailing NULs dropped."""
    bits = [int(b) for b in (bits.bits if isinstance(bits, SecretMessage) else bits)]
    out = bytearray()
    for i in range(0, len(bits) - len(bits) % 8, 8):
        out.append(int("".join(map(str, bits[i:i + 8])), 2))
    return out.decode("latin-1").rstrip("\x00")


@dataclass
class GeneratorTrainConfig:
    image_size: tuple[int, int, int] = (32, 32, 3)
    message_length: int = 16
    perceptual_weight: float = 30.0
    message_weight: float = 1.0
    ramp_start: float = 0.1  # fraction of steps with the perceptual weight held at 0
    ramp_end: float = 0.5  # fraction of steps by which it reaches its final value
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    holdout_fraction: float = 0.1
    quantize_noise: bool = True  # train the decoder on 8-bit rounded images
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.message_weight <= 0:
            raise ValueError("message weight must be > 0")
        if self.perceptual_weight < 0:
            raise ValueError("perceptual weight must be >= 0")
        if not 0 <= self.ramp_start <= self.ramp_end <= 1:
            raise ValueError("need 0 <= ramp_start <= ramp_end <= 1")
        if self.message_length < 8:
            raise ValueError("message length must be at least 8 bits")

    def perceptual_weight_at(self, step: int, total_steps: int) -> float:
        frac = step / max(total_steps, 1)
        if frac < self.ramp_start:
            return 0.0
        if frac >= self.ramp_end or self.ramp_end == self.ramp_start:
            return self.perceptual_weight
        return self.perceptual_weight * (frac - self.ramp_start) / (self.ramp_end - self.ramp_start)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d


def _conv(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.ReLU())


class StegoEncoder(nn.Module):
    """U-Net over the image concatenated with a spatial message map."""

    def __init__(self, message_length: int, size: int, channels: int = 3):
        super().__init__()
        self.size = size
        self.grid = max(size // 8, 1)
        self.msg = nn.Linear(message_length, 3 * self.grid * self.grid)
        cin = channels + 3
        self.d1 = _conv(cin, 32)
        self.d2 = _conv(32, 32, 2)
        self.d3 = _conv(32, 64, 2)
        self.d4 = _conv(64, 128, 2)
        self.u3 = _conv(128, 64)
        self.m3 = _conv(128, 64)
        self.u2 = _conv(64, 32)
        self.m2 = _conv(64, 32)
        self.u1 = _conv(32, 32)
        self.m1 = _conv(64 + cin, 32)
        self.out = nn.Conv2d(32, channels, 1)

    def forward(self, image, bits):
        m = F.relu(self.msg(bits * 2 - 1)).view(-1, 3, self.grid, self.grid)
        m = F.interpolate(m, size=image.shape[-2:], mode="nearest")
        x = torch.cat([image - 0.5, m], 1)
        c1 = self.d1(x)
        c2 = self.d2(c1)
        c3 = self.d3(c2)
        c4 = self.d4(c3)
        up = lambda t, ref: F.interpolate(t, size=ref.shape[-2:], mode="nearest")  # noqa: E731
        u = self.m3(torch.cat([c3, self.u3(up(c4, c3))], 1))
        u = self.m2(torch.cat([c2, self.u2(up(u, c2))], 1))
        u = self.m1(torch.cat([c1, self.u1(up(u, c1)), x], 1))
        return self.out(u)


class StegoDecoder(nn.Module):
    def __init__(self, message_length: int, size: int, channels: int = 3):
        super().__init__()
        self.features = nn.Sequential(
            _conv(channels, 32, 2), _conv(32, 32), _conv(32, 64, 2), _conv(64, 64), _conv(64, 128, 2))
        side = math.ceil(size / 8)
        self.head = nn.Sequential(nn.Flatten(), nn.Linear(128 * side * side, 256), nn.ReLU(),
                                  nn.Linear(256, message_length))

    def forward(self, image):
        return self.head(self.features(image - 0.5))


@dataclass
class EncodeResult:
    poisoned_image: np.ndarray
    residual: np.ndarray
    secret: SecretMessage


@dataclass
class TriggerGenerator:
    encoder: StegoEncoder
    decoder: StegoDecoder
    config: GeneratorTrainConfig
    history: list[dict] = field(default_factory=list)

    def _check(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, np.float32)
        if images.shape[-3:] != tuple(self.config.image_size):
            raise ShapeMismatch(f"expected images of shape {self.config.image_size}, got {images.shape}")
        return images

    def residuals(self, images: np.ndarray, secret: SecretMessage, batch_size: int = 256) -> np.ndarray:
        if secret.length != self.config.message_length:
            raise ShapeMismatch(f"secret has {secret.length} bits, generator expects "
                                f"{self.config.message_length}")
        images = self._check(images)
        single = images.ndim == 3
        batch = images[None] if single else images
        bits = torch.as_tensor(secret.array())
        out = []
        self.encoder.eval()
        with torch.no_grad():
            for i in range(0, len(batch), batch_size):
                x = torch.as_tensor(batch[i:i + batch_size]).permute(0, 3, 1, 2)
                r = self.encoder(x, bits.expand(len(x), -1))
                out.append(r.permute(0, 2, 3, 1).numpy())
        res = np.concatenate(out) if out else np.zeros_like(batch)
        return res[0] if single else res

    def decode_batch(self, images: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        images = self._check(images)
        single = images.ndim == 3
        batch = images[None] if single else images
        conf = []
        self.decoder.eval()
        with torch.no_grad():
            for i in range(0, len(batch), batch_size):
                x = torch.as_tensor(batch[i:i + batch_size]).permute(0, 3, 1, 2)
                conf.append(torch.sigmoid(self.decoder(x)).numpy())
        c = np.concatenate(conf).astype(np.float64)
        bits = (c >= 0.5).astype(np.int64)
        return (bits[0], c[0]) if single else (bits, c)

    def fingerprint(self) -> str:
        """Content hash of both networks' parameters."""
        import hashlib

        h = hashlib.sha256()
        for net in (self.encoder, self.decoder):
            for k, v in net.state_dict().items():
                h.update(k.encode())
                h.update(v.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        torch.save(self.encoder.state_dict(), d / "encoder.pt")
        torch.save(self.decoder.state_dict(), d / "decoder.pt")
        (d / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True))
        (d / "history.json").write_text(json.dumps(self.history, indent=2))
        return d

    @classmethod
    def load(cls, directory) -> "TriggerGenerator":
        d = Path(directory)
        cfg = GeneratorTrainConfig(**json.loads((d / "config.json").read_text()))
        gen = build_generator(cfg)
        gen.encoder.load_state_dict(torch.load(d / "encoder.pt", weights_only=True))
        gen.decoder.load_state_dict(torch.load(d / "decoder.pt", weights_only=True))
        hist = d / "history.json"
        gen.history = json.loads(hist.read_text()) if hist.exists() else []
        return gen


def build_generator(config: GeneratorTrainConfig) -> TriggerGenerator:
    torch.manual_seed(config.seed)
    h, w, c = config.image_size
    if h != w:
        raise ShapeMismatch("square images only")
    return TriggerGenerator(StegoEncoder(config.message_length, h, c),
                            StegoDecoder(config.message_length, h, c), config)


def encode(generator: TriggerGenerator, image: np.ndarray, secret: SecretMessage) -> EncodeResult:
    """Hide `secret` in one image (HxWxC) or a batch (NxHxWxC)."""
    image = generator._check(image)
    residual = generator.residuals(image, secret)
    poisoned = np.clip(image + residual, 0.0, 1.0).astype(np.float32)
    # the effective residual is what survives clamping
    return EncodeResult(poisoned, (poisoned - image).astype(np.float32), secret)


def decode(generator: TriggerGenerator, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bits (threshold 0.5) and per-bit confidences in [0, 1]."""
    return generator.decode_batch(image)


def bit_accuracy(decoded: np.ndarray, secret) -> float:
    target = secret.array() if isinstance(secret, SecretMessage) else np.asarray(secret)
    return float(np.mean(np.asarray(decoded) == target))


def _evaluate(gen: TriggerGenerator, images: np.ndarray, rng: np.random.Generator) -> dict:
    from .metrics import psnr

    L = gen.config.message_length
    secrets = rng.integers(0, 2, (len(images), L))
    accs, psnrs = [], []
    for img, s in zip(images, secrets):
        msg = SecretMessage(tuple(int(b) for b in s))
        res = encode(gen, img, msg)
        q = np.round(res.poisoned_image * 255) / 255
        bits, _ = decode(gen, q)
        accs.append(bit_accuracy(bits, msg))
        psnrs.append(psnr(img, q, 1.0))
    finite = [p for p in psnrs if math.isfinite(p)]
    return {"heldout_bit_accuracy": float(np.mean(accs)),
            "heldout_psnr": float(np.mean(finite)) if finite else math.inf}


def train_generator(images: np.ndarray, config: GeneratorTrainConfig,
                    eval_every: int = 1) -> TriggerGenerator:
    """Jointly train encoder and decoder on benign images with random secrets.

    Loss per step: perceptual_weight(t) * MSE(x_b, x_p) + message_weight *
    BCE(bits, decoder(x_p)), with the perceptual weight ramped in.
    """
    images = np.asarray(images, np.float32)
    if images.ndim != 4 or images.shape[1:] != tuple(config.image_size):
        raise ShapeMismatch(f"expected N x {config.image_size} images, got {images.shape}")
    if len(images) < 1000:
        log.warning("generator training on only %d images", len(images))
    gen = build_generator(config)
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(images))
    n_hold = max(1, int(round(len(images) * config.holdout_fraction))) if len(images) > 1 else 0
    hold, train = images[perm[:n_hold]], images[perm[n_hold:]]
    if len(train) == 0:
        train = images

    torch.manual_seed(config.seed)
    tgen = torch.Generator().manual_seed(config.seed)
    params = list(gen.encoder.parameters()) + list(gen.decoder.parameters())
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    x_all = torch.as_tensor(train).permute(0, 3, 1, 2).contiguous()
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total = steps_per_epoch * config.epochs
    step = 0
    for epoch in range(1, config.epochs + 1):
        gen.encoder.train()
        gen.decoder.train()
        order = torch.randperm(len(train), generator=tgen)
        sums = {"loss": 0.0, "image_mse": 0.0, "message_bce": 0.0, "bit_accuracy": 0.0}
        for start in range(0, len(train), config.batch_size):
            x = x_all[order[start:start + config.batch_size]]
            bits = torch.randint(0, 2, (len(x), config.message_length), generator=tgen).float()
            x_p = torch.clamp(x + gen.encoder(x, bits), 0.0, 1.0)
            seen = x_p
            if config.quantize_noise:
                seen = x_p + (torch.rand(x_p.shape, generator=tgen) - 0.5) / 255.0
            logits = gen.decoder(seen)
            mse = F.mse_loss(x_p, x)
            bce = F.binary_cross_entropy_with_logits(logits, bits)
            lp = config.perceptual_weight_at(step, total)
            loss = lp * mse + config.message_weight * bce
            if not torch.isfinite(loss):
                raise DivergedTraining(f"non-finite generator loss at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            n = len(x)
            sums["loss"] += float(loss.detach()) * n
            sums["image_mse"] += float(mse.detach()) * n
            sums["message_bce"] += float(bce.detach()) * n
            sums["bit_accuracy"] += float(((logits > 0).float() == bits).float().mean()) * n
        entry = {"epoch": epoch, "perceptual_weight": config.perceptual_weight_at(step, total)}
        entry.update({k: v / len(train) for k, v in sums.items()})
        if n_hold and (epoch % eval_every == 0 or epoch == config.epochs):
            entry.update(_evaluate(gen, hold, np.random.default_rng(config.seed + epoch)))
        log.info("generator epoch %d %s", epoch, entry)
        gen.history.append(entry)
    gen.encoder.eval()
    gen.decoder.eval()
    return gen
