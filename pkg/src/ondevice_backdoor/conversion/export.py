"""Write a (retrained) TrainableModel back to the deployable flat-schema format."""

from __future__ import annotations

import numpy as np

from ..errors import ExportUnsupported, UnfilledParameters
from ..formats import flatschema
from ..formats import graph as g
from .model import (ADD, AVG_POOL, CONV2D, DENSE, DEPTHWISE_CONV2D, GLOBAL_AVG_POOL, IDENTITY,
                    MAX_POOL, RELU, RELU6, RESHAPE, SOFTMAX, TrainableModel, relayout)

_OPS = {CONV2D: g.CONV2D, DEPTHWISE_CONV2D: g.DEPTHWISE_CONV2D, DENSE: g.DENSE,
        MAX_POOL: g.MAX_POOL, AVG_POOL: g.AVG_POOL, GLOBAL_AVG_POOL: g.MEAN, RELU: g.RELU,
        RELU6: g.RELU6, SOFTMAX: g.SOFTMAX, ADD: g.ADD, RESHAPE: g.RESHAPE}


def to_graph(model: TrainableModel) -> g.Graph:
    """Lower a filled TrainableModel to a float flat-schema graph."""
    missing = model.unfilled_slots()
    if missing:
        raise UnfilledParameters("cannot export with unfilled slots: " + ", ".join(missing))
    model.check()
    tensors: list[g.Tensor] = []
    nodes: list[g.Node] = []

    def tensor(name, shape, dtype="float32", data=None, quant=None):
        t = g.Tensor(len(tensors), name, dtype, tuple(int(d) for d in shape), data, quant)
        tensors.append(t)
        return t.index

    shapes: dict[str, tuple] = {}
    value_of: dict[str, int] = {}
    graph_inputs = []
    symbolic = False
    for k, spec in enumerate(model.inputs):
        shape = tuple(spec.shape)
        symbolic |= bool(shape) and shape[0] < 0
        if spec.quantization is not None:
            scale, zp = spec.quantization
            q = g.Quantization(np.array([scale], np.float32), np.array([zp], np.int64))
            raw = tensor(spec.name, shape, spec.dtype, quant=q)
            deq = tensor(spec.name + "/dequantized", shape)
            nodes.append(g.Node(len(nodes), spec.name + "/dequantize", g.DEQUANTIZE, [raw], [deq]))
            graph_inputs.append(raw)
            value_of[f"{model.INPUT_PREFIX}{k}"] = deq
        else:
            graph_inputs.append(tensor(spec.name, shape))
            value_of[f"{model.INPUT_PREFIX}{k}"] = graph_inputs[-1]
        shapes[f"{model.INPUT_PREFIX}{k}"] = shape

    # shapes of every layer output, from one dry run at batch 1
    probe = _probe_shapes(model)

    for layer in model.layers:
        if layer.layer_type == IDENTITY:
            value_of[layer.name] = value_of[layer.inputs[0]]
            continue
        if layer.layer_type not in _OPS:
            raise ExportUnsupported(layer.layer_type)
        c = layer.config
        slots = layer.parameter_slots
        ins = [value_of[s] for s in layer.inputs]
        options = {}
        if layer.layer_type == CONV2D:
            w = relayout(slots["kernel"].value, "OIHW", "OHWI")
            ins += [tensor(f"{layer.name}/kernel", w.shape, data=w)]
            ins += [tensor(f"{layer.name}/bias", slots["bias"].shape, data=slots["bias"].value)
                    if "bias" in slots else -1]
            options = {"padding": c["padding"], "strides": c["strides"],
                       "dilation": c.get("dilation", (1, 1)), "activation": c.get("activation")}
        elif layer.layer_type == DEPTHWISE_CONV2D:
            w = relayout(slots["kernel"].value, "O1HW", "1HWO")
            ins += [tensor(f"{layer.name}/kernel", w.shape, data=w)]
            ins += [tensor(f"{layer.name}/bias", slots["bias"].shape, data=slots["bias"].value)
                    if "bias" in slots else -1]
            options = {"padding": c["padding"], "strides": c["strides"],
                       "dilation": c.get("dilation", (1, 1)),
                       "depth_multiplier": c["depth_multiplier"], "activation": c.get("activation")}
        elif layer.layer_type == DENSE:
            w = slots["kernel"].value
            ins += [tensor(f"{layer.name}/kernel", w.shape, data=w)]
            ins += [tensor(f"{layer.name}/bias", slots["bias"].shape, data=slots["bias"].value)
                    if "bias" in slots else -1]
            options = {"activation": c.get("activation"), "keep_num_dims": c.get("keep_num_dims", False)}
        elif layer.layer_type in (MAX_POOL, AVG_POOL):
            options = {"padding": c["padding"], "strides": c["strides"],
                       "pool_size": c["pool_size"], "activation": c.get("activation")}
        elif layer.layer_type == GLOBAL_AVG_POOL:
            axes = np.asarray(c["axes"], np.int32)
            ins += [tensor(f"{layer.name}/axes", axes.shape, "int32", axes)]
            options = {"keep_dims": c.get("keep_dims", False)}
        elif layer.layer_type == SOFTMAX:
            options = {"beta": c.get("beta", 1.0)}
        elif layer.layer_type == ADD:
            if "addend" in slots:
                v = slots["addend"].value
                ins += [tensor(f"{layer.name}/addend", v.shape, data=v)]
            options = {"activation": c.get("activation")}
        elif layer.layer_type == RESHAPE:
            new_shape = [int(d) for d in c["new_shape"]]
            if symbolic and new_shape and new_shape[0] == 1:
                new_shape[0] = -1
            arr = np.asarray(new_shape, np.int32)
            ins += [tensor(f"{layer.name}/shape", arr.shape, "int32", arr)]
            options = {"new_shape": tuple(new_shape)}

        out_shape = probe[layer.name]
        if symbolic and out_shape:
            out_shape = (-1,) + tuple(out_shape[1:])
        out = tensor(layer.name, out_shape)
        nodes.append(g.Node(len(nodes), layer.name, _OPS[layer.layer_type], ins, [out], options))
        value_of[layer.name] = out

    outputs = [value_of[o] for o in model.outputs]
    return g.Graph(g.FLAT_SCHEMA, tensors, nodes, graph_inputs, outputs)


def _probe_shapes(model: TrainableModel) -> dict[str, tuple]:
    import torch

    from .model import _to_nhwc

    module = model.to_module().eval()
    feeds = []
    for spec in model.inputs:
        shape = [1 if d < 0 else int(d) for d in spec.shape]
        feeds.append(torch.zeros(shape))
    shapes = {}
    values = {}
    with torch.no_grad():
        for k, (spec, x) in enumerate(zip(model.inputs, feeds)):
            values[f"{model.INPUT_PREFIX}{k}"] = x.permute(0, 3, 1, 2) if x.dim() == 4 else x
        for layer in model.layers:
            values[layer.name] = module._apply(layer, [values[s] for s in layer.inputs])
            shapes[layer.name] = tuple(_to_nhwc(values[layer.name]).shape)
    return shapes


def export_deployable(model: TrainableModel, description: str = "") -> bytes:
    """Serialize to flat-schema bytes loadable by the model validator."""
    return flatschema.dump(to_graph(model), description)
