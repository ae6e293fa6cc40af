"""Trainable model representation and its PyTorch execution.

A :class:`TrainableModel` is a list of :class:`LayerSpec` mirroring the
source graph one-to-one. Parameter slots hold numpy arrays in the layout
PyTorch expects (``OIHW`` convolutions, ``OI`` dense weights); the
:class:`TorchGraph` module built from it is what gets fine-tuned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeMismatch, UnfilledParameters
from ..formats.runtime import resolve_shape, same_padding

CONV2D = "conv2d"
DEPTHWISE_CONV2D = "depthwise_conv2d"
DENSE = "dense"
MAX_POOL = "max_pool"
AVG_POOL = "avg_pool"
GLOBAL_AVG_POOL = "global_avg_pool"
RELU = "relu"
RELU6 = "relu6"
SOFTMAX = "softmax"
ADD = "add"
RESHAPE = "reshape"
IDENTITY = "identity"

LAYER_TYPES = (CONV2D, DEPTHWISE_CONV2D, DENSE, MAX_POOL, AVG_POOL, GLOBAL_AVG_POOL,
               RELU, RELU6, SOFTMAX, ADD, RESHAPE, IDENTITY)
LAYOUTS = ("OIHW", "O1HW", "OI", "O", "NHWC", "ANY")


def relayout(array: np.ndarray, src: str, dst: str, groups: int | None = None) -> np.ndarray:
    """Move a weight tensor between named layouts.

    Plain letter permutations (``OHWI`` -> ``HWIO``) are transposes. The
    depthwise layouts need the channel count: ``1HWO`` and ``HWCM`` store
    ``C*M`` output channels differently from PyTorch's ``O1HW``.
    """
    if src == dst:
        return array
    if src == "1HWO" and dst == "O1HW":
        return array.transpose(3, 0, 1, 2)
    if src == "O1HW" and dst == "1HWO":
        return array.transpose(1, 2, 3, 0)
    if src == "HWCM" and dst == "O1HW":
        kh, kw, c, m = array.shape
        return array.reshape(kh, kw, c * m)[None].transpose(3, 0, 1, 2)
    if src == "O1HW" and dst == "HWCM":
        if groups is None:
            raise ValueError("HWCM needs the input channel count")
        o, _, kh, kw = array.shape
        return array.transpose(2, 3, 1, 0).reshape(kh, kw, groups, o // groups)
    if sorted(src) != sorted(dst) or len(set(src)) != len(src):
        raise ValueError(f"cannot relayout {src} -> {dst}")
    return array.transpose([src.index(ax) for ax in dst])


@dataclass
class ParameterSlot:
    shape: tuple
    layout: str
    value: np.ndarray | None = None
    trainable: bool = True
    source: dict | None = None

    @property
    def filled(self) -> bool:
        return self.value is not None

    def fill(self, value: np.ndarray, slot_name: str = "") -> None:
        value = np.asarray(value, dtype=np.float32)
        if tuple(value.shape) != tuple(self.shape):
            raise ShapeMismatch(f"{slot_name}: expected {tuple(self.shape)}, got {tuple(value.shape)}")
        self.value = value


@dataclass
class LayerSpec:
    name: str
    layer_type: str
    config: dict = field(default_factory=dict)
    parameter_slots: dict[str, ParameterSlot] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    source_op: str = ""

    def check(self) -> None:
        if self.layer_type not in LAYER_TYPES:
            raise ValueError(f"unknown layer type {self.layer_type}")
        for slot_name, slot in self.parameter_slots.items():
            if slot.layout not in LAYOUTS:
                raise ValueError(f"{self.name}.{slot_name}: undeclared layout {slot.layout}")
        cfg = self.config
        kernel = self.parameter_slots.get("kernel")
        if kernel is None:
            return
        if self.layer_type == DENSE:
            expected = (cfg["units"], cfg["in_features"])
            if tuple(kernel.shape) != expected:
                raise ShapeMismatch(f"{self.name}.kernel: config implies {expected}, slot is {kernel.shape}")
            return
        kh, kw = cfg["kernel_size"]
        if self.layer_type == CONV2D:
            expected = (cfg["filters"], cfg["in_channels"], kh, kw)
        elif self.layer_type == DEPTHWISE_CONV2D:
            expected = (cfg["in_channels"] * cfg["depth_multiplier"], 1, kh, kw)
        else:
            return
        if tuple(kernel.shape) != expected:
            raise ShapeMismatch(f"{self.name}.kernel: config implies {expected}, slot is {kernel.shape}")


@dataclass
class InputSpec:
    name: str
    shape: tuple  # NHWC / source order; leading -1 marks a symbolic batch
    dtype: str = "float32"
    quantization: tuple[float, int] | None = None  # (scale, zero_point) of a raw integer input


@dataclass
class TrainableModel:
    layers: list[LayerSpec]
    inputs: list[InputSpec]
    outputs: list[str]
    output_quantization: list[tuple[float, int] | None] = field(default_factory=list)
    source_format: str = ""

    INPUT_PREFIX = "input:"

    @property
    def connectivity(self) -> list[tuple[str, str]]:
        return [(src, layer.name) for layer in self.layers for src in layer.inputs]

    @property
    def trainable(self) -> dict[str, bool]:
        return {f"{l.name}.{s}": slot.trainable
                for l in self.layers for s, slot in l.parameter_slots.items()}

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def check(self) -> None:
        names = {l.name for l in self.layers}
        if len(names) != len(self.layers):
            raise ValueError("duplicate layer names")
        seen = {f"{self.INPUT_PREFIX}{i}" for i in range(len(self.inputs))}
        for l in self.layers:
            l.check()
            for src in l.inputs:
                if src not in seen:
                    raise ValueError(f"{l.name} consumes {src} before it is produced (cycle or dangling)")
            seen.add(l.name)
        for out in self.outputs:
            if out not in names and out not in seen:
                raise ValueError(f"unknown output {out}")

    def unfilled_slots(self) -> list[str]:
        return [f"{l.name}.{s}" for l in self.layers
                for s, slot in l.parameter_slots.items() if not slot.filled]

    def parameter_count(self) -> int:
        return int(sum(np.prod(slot.shape) for l in self.layers for slot in l.parameter_slots.values()))

    def to_module(self) -> "TorchGraph":
        missing = self.unfilled_slots()
        if missing:
            raise UnfilledParameters("unfilled parameter slots: " + ", ".join(missing))
        return TorchGraph(self)

    def update_from_module(self, module: "TorchGraph") -> None:
        """Copy (trained) module parameters back into the slots."""
        for l in self.layers:
            for s, slot in l.parameter_slots.items():
                slot.value = module.params[module.key(l.name, s)].detach().cpu().numpy().astype(np.float32)

    def clone(self) -> "TrainableModel":
        import copy
        return copy.deepcopy(self)

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Primary-output inference on an NHWC numpy batch (float32)."""
        module = self.to_module().eval()
        outs = []
        with torch.no_grad():
            for i in range(0, len(x), batch_size):
                outs.append(module(torch.as_tensor(x[i:i + batch_size]))[0].numpy())
        return np.concatenate(outs) if outs else np.zeros((0,))


def _same_pad(x: torch.Tensor, kernel, strides, dilation=(1, 1), value=0.0) -> torch.Tensor:
    top, bottom = same_padding(x.shape[2], kernel[0], strides[0], dilation[0])
    left, right = same_padding(x.shape[3], kernel[1], strides[1], dilation[1])
    if top == bottom == left == right == 0:
        return x
    return F.pad(x, (left, right, top, bottom), value=value)


def _activation(x, name):
    if name is None:
        return x
    if name == "relu":
        return F.relu(x)
    if name == "relu6":
        return F.relu6(x)
    raise ValueError(f"unsupported activation {name}")


def _to_nhwc(x):
    return x.permute(0, 2, 3, 1) if x.dim() == 4 else x


def _to_nchw(x):
    return x.permute(0, 3, 1, 2) if x.dim() == 4 else x


class TorchGraph(nn.Module):
    """Executes a TrainableModel. Accepts and returns NHWC tensors; 4-D
    activations are kept NCHW internally."""

    def __init__(self, model: TrainableModel):
        super().__init__()
        model.check()
        self.spec = model
        self.params = nn.ParameterDict()
        for l in model.layers:
            for s, slot in l.parameter_slots.items():
                p = nn.Parameter(torch.as_tensor(np.array(slot.value, dtype=np.float32)),
                                 requires_grad=slot.trainable)
                self.params[self.key(l.name, s)] = p

    @staticmethod
    def key(layer: str, slot: str) -> str:
        return f"{layer}__{slot}".replace(".", "_")

    def _p(self, layer, slot):
        k = self.key(layer.name, slot)
        return self.params[k] if k in self.params else None

    def forward(self, *inputs: torch.Tensor, logits: bool = False) -> list[torch.Tensor]:
        """NHWC outputs. With `logits`, an output produced by a softmax layer
        is returned as the softmax input instead (for cross-entropy training)."""
        values = {}
        for i, (spec, x) in enumerate(zip(self.spec.inputs, inputs)):
            x = x.to(self._dtype())
            if spec.quantization is not None:
                scale, zp = spec.quantization
                x = (x - zp) * scale
            values[f"{TrainableModel.INPUT_PREFIX}{i}"] = _to_nchw(x)
        for layer in self.spec.layers:
            args = [values[s] for s in layer.inputs]
            values[layer.name] = self._apply(layer, args)
        outs = []
        for o in self.spec.outputs:
            layer = self.spec.layer(o)
            while layer.layer_type == IDENTITY and not layer.inputs[0].startswith(TrainableModel.INPUT_PREFIX):
                layer = self.spec.layer(layer.inputs[0])
            if logits and layer.layer_type == SOFTMAX:
                src = values[layer.inputs[0]]
                outs.append(_to_nhwc(src * layer.config.get("beta", 1.0)))
            else:
                outs.append(_to_nhwc(values[o]))
        return outs

    def _dtype(self):
        for p in self.params.values():
            return p.dtype
        return torch.float32

    def _apply(self, layer: LayerSpec, args):
        t, c = layer.layer_type, layer.config
        x = args[0] if args else None
        if t == CONV2D or t == DEPTHWISE_CONV2D:
            if c["padding"] == "same":
                x = _same_pad(x, c["kernel_size"], c["strides"], c.get("dilation", (1, 1)))
            groups = c["in_channels"] if t == DEPTHWISE_CONV2D else 1
            y = F.conv2d(x, self._p(layer, "kernel"), self._p(layer, "bias"), stride=tuple(c["strides"]),
                         dilation=tuple(c.get("dilation", (1, 1))), groups=groups)
            return _activation(y, c.get("activation"))
        if t == DENSE:
            w = self._p(layer, "kernel")
            if not c.get("keep_num_dims", False):
                x = _to_nhwc(x).reshape(-1, w.shape[1])
            return _activation(F.linear(x, w, self._p(layer, "bias")), c.get("activation"))
        if t == MAX_POOL:
            if c["padding"] == "same":
                x = _same_pad(x, c["pool_size"], c["strides"], value=float("-inf"))
            y = F.max_pool2d(x, tuple(c["pool_size"]), tuple(c["strides"]))
            return _activation(y, c.get("activation"))
        if t == AVG_POOL:
            if c["padding"] == "same":
                ones = torch.ones_like(x[:, :1])
                total = F.avg_pool2d(_same_pad(x, c["pool_size"], c["strides"]),
                                     tuple(c["pool_size"]), tuple(c["strides"]), divisor_override=1)
                count = F.avg_pool2d(_same_pad(ones, c["pool_size"], c["strides"]),
                                     tuple(c["pool_size"]), tuple(c["strides"]), divisor_override=1)
                y = total / count
            else:
                y = F.avg_pool2d(x, tuple(c["pool_size"]), tuple(c["strides"]))
            return _activation(y, c.get("activation"))
        if t == GLOBAL_AVG_POOL:
            nhwc_axes = c["axes"]
            if x.dim() == 4:
                axes = tuple({1: 2, 2: 3, 3: 1, 0: 0}[a % 4] for a in nhwc_axes)
            else:
                axes = tuple(nhwc_axes)
            y = x.mean(dim=axes, keepdim=c.get("keep_dims", False))
            return y
        if t == RELU:
            return F.relu(x)
        if t == RELU6:
            return F.relu6(x)
        if t == SOFTMAX:
            dim = 1 if x.dim() == 4 else -1
            return torch.softmax(c.get("beta", 1.0) * x, dim=dim)
        if t == ADD:
            if len(args) == 1:
                const = self._p(layer, "addend")
                if const.dim() == 4:
                    const = _to_nchw(const)
                elif x.dim() == 4 and const.dim() == 1:
                    const = const.view(1, -1, 1, 1)
                y = x + const
            else:
                y = args[0] + args[1]
            return _activation(y, c.get("activation"))
        if t == RESHAPE:
            x = _to_nhwc(x)
            shape = resolve_shape(c["new_shape"], x.numel(), x.shape[0])
            return _to_nchw(x.reshape(shape))
        if t == IDENTITY:
            return x
        raise ValueError(f"unknown layer type {t}")
