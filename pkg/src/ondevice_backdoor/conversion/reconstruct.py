"""Rebuild a trainable model from an inference-only graph and copy its
parameters across."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, UnsupportedFormat, UnsupportedOperator
from ..formats import UNKNOWN_FORMAT, load_model
from ..formats import graph as g
from .model import (ADD, AVG_POOL, CONV2D, DENSE, DEPTHWISE_CONV2D, GLOBAL_AVG_POOL, IDENTITY,
                    MAX_POOL, RELU, RELU6, RESHAPE, SOFTMAX, InputSpec, LayerSpec,
                    ParameterSlot, TrainableModel, relayout)

SUPPORTED_OPERATORS = frozenset({
    g.CONV2D, g.DEPTHWISE_CONV2D, g.DENSE, g.MAX_POOL, g.AVG_POOL, g.MEAN, g.RELU, g.RELU6,
    g.SOFTMAX, g.ADD, g.RESHAPE, g.QUANTIZE, g.DEQUANTIZE,
    # graph-proto only; folded or dropped during reconstruction
    g.BIAS_ADD, g.BATCH_NORM, g.IDENTITY,
})
_ACTIVATIONS = (None, "relu", "relu6")
_INT_TYPES = ("uint8", "int8", "int16")


def _graph(source, format_hint=UNKNOWN_FORMAT) -> g.Graph:
    return source if isinstance(source, g.Graph) else load_model(source, format_hint)


def _const(graph, idx):
    return idx >= 0 and graph.tensors[idx].data is not None


def _check_whitelist(graph: g.Graph) -> None:
    bad = [n.op if n.op not in SUPPORTED_OPERATORS else f"{n.op}+{n.options['activation']}"
           for n in graph.nodes
           if n.op not in SUPPORTED_OPERATORS or n.options.get("activation") not in _ACTIVATIONS]
    if bad:
        raise UnsupportedOperator(bad)


def _fold_targets(graph: g.Graph) -> dict[int, int]:
    """graph-proto: map BiasAdd / FusedBatchNorm node -> the conv/dense node it folds into."""
    if graph.format != g.GRAPH_PROTO:
        return {}
    prod, cons = graph.producers(), graph.consumers()
    folds: dict[int, int] = {}
    host_of: dict[int, int] = {}
    for n in graph.nodes:
        if n.op not in (g.BIAS_ADD, g.BATCH_NORM):
            continue
        src = n.inputs[0]
        if src not in prod or len(cons.get(src, [])) != 1:
            continue
        p = graph.nodes[prod[src]]
        host = host_of.get(p.index, p.index)
        hn = graph.nodes[host]
        if hn.op in (g.CONV2D, g.DEPTHWISE_CONV2D, g.DENSE) and all(_const(graph, i) for i in n.inputs[1:]):
            if n.op == g.BIAS_ADD and any(graph.nodes[k].op == g.BIAS_ADD
                                          for k, h in folds.items() if h == host):
                continue
            folds[n.index] = host
            host_of[n.index] = host
    return folds


def reconstruct_trainable(model, format_hint: str = UNKNOWN_FORMAT) -> TrainableModel:
    """Mirror the source graph as a trainable layer list, parameters unfilled.

    Raises UnsupportedOperator listing every operator outside the whitelist.
    """
    graph = _graph(model, format_hint)
    if not graph.nodes:
        raise UnsupportedFormat("graph has no operators to reconstruct")
    _check_whitelist(graph)
    folds = _fold_targets(graph)
    for n in graph.nodes:
        if n.op == g.BATCH_NORM and n.index not in folds:
            raise UnsupportedOperator(["FusedBatchNorm (not foldable)"])

    value_of: dict[int, str] = {}
    inputs = []
    for k, ti in enumerate(graph.inputs):
        t = graph.tensors[ti]
        q = None
        if t.dtype in _INT_TYPES and t.quantization is not None:
            q = (float(t.quantization.scale[0]), int(t.quantization.zero_point[0]))
        inputs.append(InputSpec(t.name, tuple(t.shape), t.dtype, q))
        value_of[ti] = f"{TrainableModel.INPUT_PREFIX}{k}"

    layers: list[LayerSpec] = []
    by_node: dict[int, LayerSpec] = {}
    for ni in graph.topological_order():
        node = graph.nodes[ni]
        if ni in folds:
            host = by_node[folds[ni]]
            _attach_fold(graph, node, host)
            value_of[node.outputs[0]] = host.name
            by_node[ni] = host
            continue
        if node.op == g.IDENTITY and graph.format == g.GRAPH_PROTO:
            src = node.inputs[0]
            if src in value_of:
                value_of[node.outputs[0]] = value_of[src]
                continue
        layer = _layer_for(graph, node, len(layers))
        layer.inputs = [value_of[i] for i in node.inputs if i >= 0 and i in value_of]
        layers.append(layer)
        by_node[ni] = layer
        value_of[node.outputs[0]] = layer.name

    outputs, out_q = [], []
    for ti in graph.outputs:
        if ti not in value_of or value_of[ti].startswith(TrainableModel.INPUT_PREFIX):
            raise UnsupportedFormat(f"output {graph.tensors[ti].name} is not produced by an operator")
        outputs.append(value_of[ti])
        t = graph.tensors[ti]
        out_q.append((float(t.quantization.scale[0]), int(t.quantization.zero_point[0]))
                     if t.dtype in _INT_TYPES and t.quantization is not None else None)
    tm = TrainableModel(layers, inputs, outputs, out_q, graph.format)
    tm.check()
    return tm


def _slot(shape, layout, tensor, src_layout, trainable=True, **extra) -> ParameterSlot:
    return ParameterSlot(tuple(int(d) for d in shape), layout, None, trainable,
                         {"tensor": int(tensor), "layout": src_layout, **extra})


def _layer_for(graph: g.Graph, node: g.Node, position: int) -> LayerSpec:
    o = node.options
    name = f"{position:03d}_{node.op.lower()}"
    act = o.get("activation")
    ins = node.inputs

    if node.op == g.CONV2D:
        w = graph.tensors[ins[1]]
        layout = o.get("filter_layout", "OHWI")
        hwio = relayout(np.empty(w.shape, np.int8), layout, "HWIO").shape
        kh, kw, cin, cout = hwio
        cfg = {"filters": cout, "in_channels": cin, "kernel_size": (kh, kw),
               "strides": tuple(o["strides"]), "padding": o["padding"],
               "dilation": tuple(o.get("dilation", (1, 1))), "activation": act}
        slots = {"kernel": _slot((cout, cin, kh, kw), "OIHW", ins[1], layout)}
        if len(ins) > 2 and ins[2] >= 0:
            slots["bias"] = _slot((cout,), "O", ins[2], "O")
        return LayerSpec(name, CONV2D, cfg, slots, source_op=node.raw_op)

    if node.op == g.DEPTHWISE_CONV2D:
        w = graph.tensors[ins[1]]
        layout = o.get("filter_layout", "1HWO")
        if layout == "1HWO":
            _, kh, kw, cout = w.shape
            cin = graph.tensors[ins[0]].shape[-1] if graph.tensors[ins[0]].shape else cout
            mult = cout // cin
        else:
            kh, kw, cin, mult = w.shape
            cout = cin * mult
        cfg = {"in_channels": int(cin), "depth_multiplier": int(mult), "kernel_size": (kh, kw),
               "strides": tuple(o["strides"]), "padding": o["padding"],
               "dilation": tuple(o.get("dilation", (1, 1))), "activation": act}
        slots = {"kernel": _slot((cout, 1, kh, kw), "O1HW", ins[1], layout, groups=int(cin))}
        if len(ins) > 2 and ins[2] >= 0:
            slots["bias"] = _slot((cout,), "O", ins[2], "O")
        return LayerSpec(name, DEPTHWISE_CONV2D, cfg, slots, source_op=node.raw_op)

    if node.op == g.DENSE:
        w = graph.tensors[ins[1]]
        layout = o.get("weight_layout", "OI")
        units, in_features = w.shape if layout == "OI" else w.shape[::-1]
        cfg = {"units": int(units), "in_features": int(in_features), "activation": act,
               "keep_num_dims": bool(o.get("keep_num_dims", False))}
        slots = {"kernel": _slot((units, in_features), "OI", ins[1], layout)}
        if len(ins) > 2 and ins[2] >= 0:
            slots["bias"] = _slot((units,), "O", ins[2], "O")
        return LayerSpec(name, DENSE, cfg, slots, source_op=node.raw_op)

    if node.op in (g.MAX_POOL, g.AVG_POOL):
        cfg = {"pool_size": tuple(o["pool_size"]), "strides": tuple(o["strides"]),
               "padding": o["padding"], "activation": act}
        return LayerSpec(name, MAX_POOL if node.op == g.MAX_POOL else AVG_POOL, cfg,
                         source_op=node.raw_op)

    if node.op == g.MEAN:
        axes = [int(a) for a in np.atleast_1d(graph.tensors[ins[1]].data)]
        return LayerSpec(name, GLOBAL_AVG_POOL, {"axes": axes, "keep_dims": o.get("keep_dims", False)},
                         source_op=node.raw_op)

    if node.op == g.RESHAPE:
        shape = o.get("new_shape")
        if len(ins) > 1 and _const(graph, ins[1]):
            shape = tuple(int(v) for v in graph.tensors[ins[1]].data)
        if shape is None:
            shape = tuple(d for d in graph.tensors[node.outputs[0]].shape)
        return LayerSpec(name, RESHAPE, {"new_shape": tuple(int(d) for d in shape)},
                         source_op=node.raw_op)

    if node.op in (g.ADD, g.BIAS_ADD):
        consts = [i for i in ins if _const(graph, i)]
        slots = {}
        if consts:
            t = graph.tensors[consts[0]]
            slots["addend"] = _slot(t.shape, "NHWC" if len(t.shape) == 4 else "ANY",
                                    consts[0], "NHWC" if len(t.shape) == 4 else "ANY",
                                    trainable=False)
        return LayerSpec(name, ADD, {"activation": act}, slots, source_op=node.raw_op)

    simple = {g.RELU: RELU, g.RELU6: RELU6, g.SOFTMAX: SOFTMAX, g.QUANTIZE: IDENTITY,
              g.DEQUANTIZE: IDENTITY, g.IDENTITY: IDENTITY}
    cfg = {"beta": float(o.get("beta", 1.0))} if node.op == g.SOFTMAX else {}
    return LayerSpec(name, simple[node.op], cfg, source_op=node.raw_op)


def _attach_fold(graph: g.Graph, node: g.Node, host: LayerSpec) -> None:
    cout = host.parameter_slots["kernel"].shape[0]
    if node.op == g.BIAS_ADD:
        host.parameter_slots["bias"] = _slot((cout,), "O", node.inputs[1], "O")
    else:
        bn = [int(i) for i in node.inputs[1:5]] + [float(node.options["epsilon"])]
        host.parameter_slots["kernel"].source["bn"] = bn
        bias = host.parameter_slots.get("bias")
        if bias is None:
            host.parameter_slots["bias"] = ParameterSlot((cout,), "O", None, True,
                                                         {"tensor": -1, "layout": "O", "bn": bn})
        else:
            bias.source["bn"] = bn
    host.source_op += "+" + node.raw_op


def _slot_value(graph: g.Graph, slot: ParameterSlot) -> np.ndarray:
    src = slot.source
    if src["tensor"] >= 0:
        raw = graph.tensors[src["tensor"]].float_data().astype(np.float64)
        value = relayout(raw, src["layout"], slot.layout, src.get("groups"))
    else:
        value = np.zeros(slot.shape, np.float64)
    bn = src.get("bn")
    if bn is not None:
        scale, offset, mean, var = (graph.tensors[i].float_data().astype(np.float64) for i in bn[:4])
        factor = scale / np.sqrt(var + bn[4])
        if slot.layout == "O":
            value = (value - mean) * factor + offset
        else:
            value = value * factor.reshape((-1,) + (1,) * (value.ndim - 1))
    return value.astype(np.float32)


def map_parameters(source, target: TrainableModel, format_hint: str = UNKNOWN_FORMAT) -> TrainableModel:
    """Fill every parameter slot of `target` from the source model.

    Weights are transposed from the stored layout to the slot layout and
    quantized tensors dequantized with their stored scale/zero-point.
    Raises ShapeMismatch naming the offending slot.
    """
    graph = _graph(source, format_hint)
    for layer in target.layers:
        layer.check()
        for slot_name, slot in layer.parameter_slots.items():
            if slot.source is None:
                continue
            try:
                value = _slot_value(graph, slot)
            except ValueError as exc:
                raise ShapeMismatch(f"{layer.name}.{slot_name}: {exc}") from exc
            slot.fill(value, f"{layer.name}.{slot_name}")
    return target


def convert(model, format_hint: str = UNKNOWN_FORMAT) -> TrainableModel:
    """reconstruct_trainable followed by map_parameters on the same source."""
    graph = _graph(model, format_hint)
    return map_parameters(graph, reconstruct_trainable(graph))
