"""Supervised training of a TrainableModel, and the desk-scale victim
architecture that stands in for an app developer's classifier."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .conversion.model import (CONV2D, DENSE, MAX_POOL, RESHAPE, SOFTMAX, InputSpec, LayerSpec,
                               ParameterSlot, TrainableModel)
from .errors import DivergedTraining

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    epochs: int = 8
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    lr_schedule: str = "constant"  # or "cosine": decay to zero over all steps
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")

    def to_dict(self) -> dict:
        return asdict(self)


def _slot(shape, layout, rng, fan_in=None):
    if layout == "O":
        value = np.zeros(shape, np.float32)
    else:
        value = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape).astype(np.float32)
    return ParameterSlot(tuple(shape), layout, value, True, {"init": "he-normal"})


def desk_cnn(num_classes: int = 10, size: int = 32, channels: int = 3, seed: int = 0) -> TrainableModel:
    """Four 3x3 convolutions, three 2x2 max-pools and two dense layers
    (about 94k parameters for 10 classes at 32x32)."""
    rng = np.random.default_rng(seed)
    layers: list[LayerSpec] = []
    prev = TrainableModel.INPUT_PREFIX + "0"

    def add(layer):
        nonlocal prev
        layer.inputs = [prev]
        layers.append(layer)
        prev = layer.name

    cin, side = channels, size
    for i, (cout, pool) in enumerate(((16, False), (32, True), (64, True), (64, True))):
        add(LayerSpec(f"conv{i}", CONV2D,
                      {"filters": cout, "in_channels": cin, "kernel_size": (3, 3), "strides": (1, 1),
                       "padding": "same", "dilation": (1, 1), "activation": "relu"},
                      {"kernel": _slot((cout, cin, 3, 3), "OIHW", rng, cin * 9),
                       "bias": _slot((cout,), "O", rng)}))
        if pool:
            add(LayerSpec(f"pool{i}", MAX_POOL, {"pool_size": (2, 2), "strides": (2, 2),
                                                  "padding": "valid", "activation": None}))
            side //= 2
        cin = cout
    flat = side * side * cin
    add(LayerSpec("flatten", RESHAPE, {"new_shape": (1, flat)}))
    add(LayerSpec("fc0", DENSE, {"units": 32, "in_features": flat, "activation": "relu",
                                 "keep_num_dims": False},
                  {"kernel": _slot((32, flat), "OI", rng, flat), "bias": _slot((32,), "O", rng)}))
    add(LayerSpec("fc1", DENSE, {"units": num_classes, "in_features": 32, "activation": None,
                                 "keep_num_dims": False},
                  {"kernel": _slot((num_classes, 32), "OI", rng, 32),
                   "bias": _slot((num_classes,), "O", rng)}))
    add(LayerSpec("probs", SOFTMAX, {"beta": 1.0}))
    model = TrainableModel(layers, [InputSpec("image", (-1, size, size, channels))], [prev],
                           [None], "trainable")
    model.check()
    return model


def fit(model: TrainableModel, images: np.ndarray, labels: np.ndarray, schedule: TrainSchedule,
        callback=None) -> list[dict]:
    """Cross-entropy training in place; returns per-epoch history.

    `callback(epoch, model)` may return extra metrics (e.g. ASR) that are
    merged into that epoch's history entry.
    """
    torch.manual_seed(schedule.seed)
    gen = torch.Generator().manual_seed(schedule.seed)
    module = model.to_module().train()
    params = [p for p in module.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=schedule.learning_rate, weight_decay=schedule.weight_decay)
    x_all = torch.as_tensor(np.asarray(images, np.float32))
    y_all = torch.as_tensor(np.asarray(labels, np.int64))
    n = len(y_all)
    total_steps = schedule.epochs * math.ceil(n / schedule.batch_size)
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, total_steps)
             if schedule.lr_schedule == "cosine" else None)
    history = []
    for epoch in range(1, schedule.epochs + 1):
        order = torch.randperm(n, generator=gen)
        total, correct, seen = 0.0, 0, 0
        for start in range(0, n, schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            logits = module(x_all[idx], logits=True)[0].reshape(len(idx), -1)
            loss = F.cross_entropy(logits, y_all[idx])
            if not torch.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            total += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(1) == y_all[idx]).sum())
            seen += len(idx)
        entry = {"epoch": epoch, "loss": total / seen, "train_accuracy": 100.0 * correct / seen}
        model.update_from_module(module)
        if callback is not None:
            entry.update(callback(epoch, model) or {})
        log.info("epoch %d %s", epoch, entry)
        history.append(entry)
    model.update_from_module(module)
    return history
