"""Straightforward NHWC numpy interpreter over :class:`Graph`.

This is the "original model" side of equivalence checks: it runs the parsed
on-device graph directly from its stored tensors and layouts, sharing no
code with the trainable reconstruction. Quantized graphs are emulated by
dequantizing inputs, computing in float and requantizing outputs.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import UnsupportedOperator
from . import graph as g

_INT_RANGES = {"uint8": (0, 255), "int8": (-128, 127), "int16": (-32768, 32767)}


def same_padding(size: int, kernel: int, stride: int, dilation: int = 1) -> tuple[int, int]:
    eff = (kernel - 1) * dilation + 1
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + eff - size, 0)
    return total // 2, total - total // 2


def _pad_hw(x, kh, kw, strides, padding, dilation=(1, 1), value=0.0):
    if padding != "same":
        return x, (0, 0, 0, 0)
    top, bottom = same_padding(x.shape[1], kh, strides[0], dilation[0])
    left, right = same_padding(x.shape[2], kw, strides[1], dilation[1])
    x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=value)
    return x, (top, bottom, left, right)


def _windows(x, kh, kw, strides, dilation=(1, 1)):
    """Yield (i, j, slice) for each kernel tap over a pre-padded NHWC input."""
    n, h, w, _ = x.shape
    oh = (h - ((kh - 1) * dilation[0] + 1)) // strides[0] + 1
    ow = (w - ((kw - 1) * dilation[1] + 1)) // strides[1] + 1
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation[0], j * dilation[1]
            yield i, j, x[:, r0:r0 + strides[0] * (oh - 1) + 1:strides[0],
                          c0:c0 + strides[1] * (ow - 1) + 1:strides[1], :]


def conv2d(x, w_hwio, bias, strides, padding, dilation=(1, 1)):
    kh, kw = w_hwio.shape[:2]
    xp, _ = _pad_hw(x, kh, kw, strides, padding, dilation)
    out = None
    for i, j, patch in _windows(xp, kh, kw, strides, dilation):
        term = patch.astype(np.float64) @ w_hwio[i, j].astype(np.float64)
        out = term if out is None else out + term
    if bias is not None:
        out = out + bias
    return out


def depthwise_conv2d(x, w_hwcm, bias, strides, padding, dilation=(1, 1)):
    kh, kw, c, m = w_hwcm.shape
    xp, _ = _pad_hw(x, kh, kw, strides, padding, dilation)
    out = None
    for i, j, patch in _windows(xp, kh, kw, strides, dilation):
        term = patch.astype(np.float64)[..., :, None] * w_hwcm[i, j].astype(np.float64)
        out = term if out is None else out + term
    out = out.reshape(*out.shape[:3], c * m)
    if bias is not None:
        out = out + bias
    return out


def pool2d(x, kind, pool_size, strides, padding):
    kh, kw = pool_size
    if kind == "max":
        xp, _ = _pad_hw(x, kh, kw, strides, padding, value=-np.inf)
        out = None
        for _, _, patch in _windows(xp, kh, kw, strides):
            out = patch if out is None else np.maximum(out, patch)
        return out
    xp, _ = _pad_hw(x.astype(np.float64), kh, kw, strides, padding)
    ones, _ = _pad_hw(np.ones((1,) + x.shape[1:3] + (1,)), kh, kw, strides, padding)
    total = sum(p for _, _, p in _windows(xp, kh, kw, strides))
    count = sum(p for _, _, p in _windows(ones, kh, kw, strides))
    return total / count


def activation(x, name):
    if name is None:
        return x
    if name == "relu":
        return np.maximum(x, 0)
    if name == "relu6":
        return np.clip(x, 0, 6)
    raise UnsupportedOperator([f"activation:{name}"])


def softmax(x, beta=1.0):
    z = beta * x.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def resolve_shape(new_shape, size: int, batch: int) -> tuple:
    shape = [int(d) for d in new_shape]
    if len(shape) > 1 and shape[0] in (1, -1) and batch != 1:
        shape[0] = batch
    if -1 in shape:
        known = int(np.prod([d for d in shape if d != -1]))
        shape[shape.index(-1)] = size // max(known, 1)
    return tuple(shape)


def conv_filter_hwio(graph: g.Graph, node: g.Node) -> np.ndarray:
    w = graph.tensors[node.inputs[1]].float_data()
    layout = node.options.get("filter_layout", "OHWI")
    if layout == "OHWI":
        return w.transpose(1, 2, 3, 0)
    return w


def depthwise_filter_hwcm(graph: g.Graph, node: g.Node, in_channels: int) -> np.ndarray:
    w = graph.tensors[node.inputs[1]].float_data()
    if node.options.get("filter_layout", "1HWO") == "1HWO":
        _, kh, kw, out = w.shape
        return w.reshape(kh, kw, in_channels, out // in_channels)
    return w


def dense_weight_oi(graph: g.Graph, node: g.Node) -> np.ndarray:
    w = graph.tensors[node.inputs[1]].float_data()
    return w.T if node.options.get("weight_layout", "OI") == "IO" else w


def _bias(graph, node, pos=2):
    if len(node.inputs) > pos and node.inputs[pos] >= 0:
        return graph.tensors[node.inputs[pos]].float_data()
    return None


def _quantize(x, tensor: g.Tensor):
    lo, hi = _INT_RANGES[tensor.dtype]
    q = tensor.quantization
    vals = np.round(x / float(q.scale[0])) + int(q.zero_point[0])
    return np.clip(vals, lo, hi).astype(np.int64)


def run(graph: g.Graph, inputs: list[np.ndarray]) -> list[np.ndarray]:
    """Evaluate the graph on a batch; returns one array per graph output."""
    values: dict[int, np.ndarray] = {}
    for t in graph.tensors:
        if t.data is not None:
            values[t.index] = t.data
    for idx, arr in zip(graph.inputs, inputs):
        values[idx] = np.asarray(arr)
    batch = int(np.asarray(inputs[0]).shape[0]) if inputs else 1

    unsupported = [n.op for n in graph.nodes if n.op not in SUPPORTED_OPS]
    if unsupported:
        raise UnsupportedOperator(unsupported)

    def as_float(tidx):
        t = graph.tensors[tidx]
        v = values[tidx]
        if t.quantization is not None and t.dtype in _INT_RANGES and t.data is None:
            return t.quantization.dequantize(np.asarray(v))
        if t.data is not None:
            return t.float_data()
        return np.asarray(v, dtype=np.float64)

    for ni in graph.topological_order():
        node = graph.nodes[ni]
        out_t = graph.tensors[node.outputs[0]]
        if node.op == g.QUANTIZE:
            src = graph.tensors[node.inputs[0]]
            x = as_float(node.inputs[0]) if src.dtype in _INT_RANGES else values[node.inputs[0]]
            values[out_t.index] = _quantize(np.asarray(x, np.float64), out_t)
            continue
        result = _KERNELS[node.op](graph, node, as_float, batch)
        if out_t.quantization is not None and out_t.dtype in _INT_RANGES:
            result = _quantize(result, out_t)
        values[out_t.index] = result
    return [values[i] for i in graph.outputs]


def _k_conv(graph, node, get, batch):
    o = node.options
    y = conv2d(get(node.inputs[0]), conv_filter_hwio(graph, node), _bias(graph, node),
               o["strides"], o["padding"], o.get("dilation", (1, 1)))
    return activation(y, o.get("activation"))


def _k_dw(graph, node, get, batch):
    o = node.options
    x = get(node.inputs[0])
    w = depthwise_filter_hwcm(graph, node, x.shape[-1])
    y = depthwise_conv2d(x, w, _bias(graph, node), o["strides"], o["padding"],
                         o.get("dilation", (1, 1)))
    return activation(y, o.get("activation"))


def _k_dense(graph, node, get, batch):
    x = get(node.inputs[0])
    w = dense_weight_oi(graph, node)
    if node.options.get("keep_num_dims"):
        y = x @ w.T
    else:
        y = x.reshape(-1, w.shape[1]) @ w.T.astype(np.float64)
    b = _bias(graph, node)
    if b is not None:
        y = y + b
    return activation(y, node.options.get("activation"))


def _k_pool(graph, node, get, batch):
    o = node.options
    kind = "max" if node.op == g.MAX_POOL else "avg"
    y = pool2d(get(node.inputs[0]), kind, o["pool_size"], o["strides"], o["padding"])
    return activation(y, o.get("activation"))


def _k_mean(graph, node, get, batch):
    axes = tuple(int(a) for a in np.atleast_1d(graph.tensors[node.inputs[1]].data))
    return get(node.inputs[0]).mean(axis=axes, keepdims=node.options.get("keep_dims", False))


def _k_add(graph, node, get, batch):
    return activation(get(node.inputs[0]) + get(node.inputs[1]), node.options.get("activation"))


def _k_reshape(graph, node, get, batch):
    x = get(node.inputs[0])
    shape = node.options.get("new_shape")
    if shape is None or len(node.inputs) > 1 and graph.tensors[node.inputs[1]].data is not None:
        shape = graph.tensors[node.inputs[1]].data
    return x.reshape(resolve_shape(shape, x.size, batch))


def _k_bias(graph, node, get, batch):
    return get(node.inputs[0]) + get(node.inputs[1])


def _k_bn(graph, node, get, batch):
    x, scale, offset, mean, var = (get(i) for i in node.inputs[:5])
    return (x - mean) / np.sqrt(var + node.options["epsilon"]) * scale + offset


_KERNELS = {
    g.CONV2D: _k_conv,
    g.DEPTHWISE_CONV2D: _k_dw,
    g.DENSE: _k_dense,
    g.MAX_POOL: _k_pool,
    g.AVG_POOL: _k_pool,
    g.MEAN: _k_mean,
    g.ADD: _k_add,
    g.RESHAPE: _k_reshape,
    g.RELU: lambda gr, n, get, b: activation(get(n.inputs[0]), "relu"),
    g.RELU6: lambda gr, n, get, b: activation(get(n.inputs[0]), "relu6"),
    g.SOFTMAX: lambda gr, n, get, b: softmax(get(n.inputs[0]), n.options.get("beta", 1.0)),
    g.DEQUANTIZE: lambda gr, n, get, b: get(n.inputs[0]),
    g.BIAS_ADD: _k_bias,
    g.BATCH_NORM: _k_bn,
    g.IDENTITY: lambda gr, n, get, b: get(n.inputs[0]),
}

SUPPORTED_OPS = frozenset(_KERNELS) | {g.QUANTIZE}


def infer_shapes(graph: g.Graph) -> None:
    """Fill unknown intermediate/output shapes by running a zero batch of 1.

    Silently leaves shapes untouched when the graph cannot be executed.
    """
    if not all(graph.tensors[i].shape and all(d != 0 for d in graph.tensors[i].shape)
               for i in graph.inputs):
        return
    feeds = []
    for i in graph.inputs:
        t = graph.tensors[i]
        dtype = np.float32 if t.dtype.startswith("float") else np.int64
        feeds.append(np.zeros([1 if d < 0 else d for d in t.shape], dtype=dtype))
    try:
        values = _run_all(graph, feeds)
    except Exception:
        return
    for t in graph.tensors:
        if not t.shape and t.index in values:
            shape = np.shape(values[t.index])
            batch_dim = graph.tensors[graph.inputs[0]].shape[0]
            if shape and batch_dim == -1:
                shape = (-1,) + tuple(shape[1:])
            t.shape = tuple(shape)


def _run_all(graph, feeds):
    # Run while exposing every intermediate value.
    saved = graph.outputs
    try:
        graph.outputs = [t for n in graph.nodes for t in n.outputs]
        outs = run(graph, feeds)
        return dict(zip(graph.outputs, outs))
    finally:
        graph.outputs = saved
