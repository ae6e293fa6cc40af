"""Dual-inference equivalence check between an on-device model and its
trainable reconstruction."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..errors import SignatureMismatch
from ..formats import UNKNOWN_FORMAT, load_model
from ..formats import graph as g
from ..formats import runtime
from .model import TrainableModel

FLOAT_TOLERANCE = 1e-5
QUANTIZED_TOLERANCE = 1e-2


@dataclass
class EquivalenceReport:
    samples_tested: int
    max_abs_diff: float
    argmax_agreement: float
    passed: bool
    tolerance: float
    seed: int
    input_range: tuple[float, float]

    def to_dict(self) -> dict:
        return asdict(self)


def default_tolerance(graph: g.Graph) -> float:
    quantized = any(t.quantization is not None and t.dtype in ("uint8", "int8")
                    for t in graph.tensors)
    return QUANTIZED_TOLERANCE if quantized else FLOAT_TOLERANCE


def _sample_inputs(spec_shape, dtype, n, rng, input_range):
    shape = [n] + [int(d) for d in spec_shape[1:]]
    if dtype in ("uint8", "int8"):
        lo, hi = (0, 255) if dtype == "uint8" else (-128, 127)
        return rng.integers(lo, hi + 1, size=shape).astype(np.int64), (lo, hi)
    lo, hi = input_range
    return rng.uniform(lo, hi, size=shape).astype(np.float32), (lo, hi)


def _check_signature(graph: g.Graph, model: TrainableModel) -> None:
    if len(graph.inputs) != len(model.inputs) or len(graph.outputs) != len(model.outputs):
        raise SignatureMismatch("input/output counts differ")
    for ti, spec in zip(graph.inputs, model.inputs):
        t = graph.tensors[ti]
        if tuple(t.shape[1:]) != tuple(spec.shape[1:]) or t.dtype != spec.dtype:
            raise SignatureMismatch(f"input {t.name}: {t.dtype}{t.shape} vs {spec.dtype}{spec.shape}")


def _original_outputs(graph, feeds, batch_size):
    outs = []
    for i in range(0, len(feeds[0]), batch_size):
        res = runtime.run(graph, [f[i:i + batch_size] for f in feeds])
        out_t = graph.tensors[graph.outputs[0]]
        primary = res[0]
        if out_t.quantization is not None and out_t.dtype in ("uint8", "int8"):
            primary = out_t.quantization.dequantize(np.asarray(primary))
        outs.append(np.asarray(primary, np.float64))
    return np.concatenate(outs)


def _reconstructed_outputs(model, feeds, batch_size):
    module = model.to_module().eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(feeds[0]), batch_size):
            res = module(*[torch.as_tensor(f[i:i + batch_size], dtype=torch.float32) for f in feeds])
            outs.append(res[0].numpy().astype(np.float64))
    return np.concatenate(outs)


def verify_equivalence(original, reconstructed: TrainableModel, n_samples: int = 100,
                       tolerance: float | None = None, seed: int = 0,
                       input_range: tuple[float, float] = (0.0, 1.0),
                       format_hint: str = UNKNOWN_FORMAT, batch_size: int = 50) -> EquivalenceReport:
    """Run both models on the same seeded uniform inputs and compare the
    primary output element-wise and by argmax."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    graph = original if isinstance(original, g.Graph) else load_model(original, format_hint)
    _check_signature(graph, reconstructed)
    if tolerance is None:
        tolerance = default_tolerance(graph)
    rng = np.random.default_rng(seed)
    feeds, used_range = [], input_range
    for ti in graph.inputs:
        t = graph.tensors[ti]
        x, used_range = _sample_inputs(t.shape, t.dtype, n_samples, rng, input_range)
        feeds.append(x)

    a = _original_outputs(graph, feeds, batch_size)
    b = _reconstructed_outputs(reconstructed, feeds, batch_size)
    if a.shape != b.shape:
        raise SignatureMismatch(f"primary output shapes differ: {a.shape} vs {b.shape}")
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    flat_a = a.reshape(len(a), -1)
    flat_b = b.reshape(len(b), -1)
    agreement = float(np.mean(flat_a.argmax(axis=1) == flat_b.argmax(axis=1)))
    return EquivalenceReport(n_samples, diff, agreement,
                             bool(diff <= tolerance and agreement == 1.0), float(tolerance),
                             seed, tuple(float(v) for v in used_range))
