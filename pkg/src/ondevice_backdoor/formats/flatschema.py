"""Reader and writer for the flat-schema (``.tflite``) model format.

Parsing goes through the generated bindings of the pinned schema
(``tflite`` package); writing uses the same bindings' builder functions.
Only the first subgraph is considered.
"""

from __future__ import annotations

import importlib

import flatbuffers
import numpy as np

from ..errors import ExportUnsupported, UnsupportedFormat
from . import graph as g

FILE_IDENTIFIER = b"TFL3"
SCHEMA_VERSION = 3


def _m(name):
    # ``tflite/__init__`` star-imports every submodule, shadowing module
    # attributes with same-named classes; go through the module registry.
    return importlib.import_module(f"tflite.{name}")


_TYPE_NAMES = {0: "float32", 1: "float16", 2: "int32", 3: "uint8", 4: "int64",
               6: "bool", 7: "int16", 9: "int8", 10: "float64"}
_TYPE_CODES = {v: k for k, v in _TYPE_NAMES.items()}
_NP_DTYPES = {"float32": np.float32, "float16": np.float16, "int32": np.int32,
              "uint8": np.uint8, "int64": np.int64, "bool": np.bool_,
              "int16": np.int16, "int8": np.int8, "float64": np.float64}

# builtin operator code -> canonical name
_OPS = {0: g.ADD, 1: g.AVG_POOL, 3: g.CONV2D, 4: g.DEPTHWISE_CONV2D, 6: g.DEQUANTIZE,
        9: g.DENSE, 17: g.MAX_POOL, 19: g.RELU, 21: g.RELU6, 22: g.RESHAPE,
        25: g.SOFTMAX, 40: g.MEAN, 114: g.QUANTIZE}
_OP_CODES = {v: k for k, v in _OPS.items()}

_ACTIVATIONS = {0: None, 1: "relu", 3: "relu6"}
_ACTIVATION_CODES = {None: 0, "relu": 1, "relu6": 3}
_PADDING = {0: "same", 1: "valid"}


def _builtin_name(code: int) -> str:
    names = {v: k for k, v in vars(_m("BuiltinOperator").BuiltinOperator).items()
             if not k.startswith("_")}
    return names.get(code, f"BUILTIN_{code}")


def _activation(code: int) -> str | None:
    if code in _ACTIVATIONS:
        return _ACTIVATIONS[code]
    return f"unsupported:{code}"


def _read_options(code: int, op) -> dict:
    table = op.BuiltinOptions()
    if table is None:
        return {}

    def init(cls_name):
        obj = getattr(_m(cls_name), cls_name)()
        obj.Init(table.Bytes, table.Pos)
        return obj

    if code == 3:
        o = init("Conv2DOptions")
        return {"padding": _PADDING[o.Padding()], "strides": (o.StrideH(), o.StrideW()),
                "dilation": (o.DilationHFactor(), o.DilationWFactor()),
                "activation": _activation(o.FusedActivationFunction())}
    if code == 4:
        o = init("DepthwiseConv2DOptions")
        return {"padding": _PADDING[o.Padding()], "strides": (o.StrideH(), o.StrideW()),
                "dilation": (o.DilationHFactor(), o.DilationWFactor()),
                "depth_multiplier": o.DepthMultiplier(),
                "activation": _activation(o.FusedActivationFunction())}
    if code in (1, 17):
        o = init("Pool2DOptions")
        return {"padding": _PADDING[o.Padding()], "strides": (o.StrideH(), o.StrideW()),
                "pool_size": (o.FilterHeight(), o.FilterWidth()),
                "activation": _activation(o.FusedActivationFunction())}
    if code == 9:
        o = init("FullyConnectedOptions")
        return {"activation": _activation(o.FusedActivationFunction()),
                "keep_num_dims": bool(o.KeepNumDims())}
    if code == 25:
        return {"beta": float(init("SoftmaxOptions").Beta())}
    if code == 0:
        return {"activation": _activation(init("AddOptions").FusedActivationFunction())}
    if code == 22:
        o = init("ReshapeOptions")
        if o.NewShapeLength():
            return {"new_shape": tuple(int(v) for v in o.NewShapeAsNumpy())}
        return {}
    if code == 40:
        return {"keep_dims": bool(init("ReducerOptions").KeepDims())}
    return {}


def _read_tensor(idx, t, model) -> g.Tensor:
    name = t.Name().decode("utf-8", "replace") if t.Name() else f"tensor_{idx}"
    dtype = _TYPE_NAMES.get(t.Type(), "other")
    shape = tuple(int(v) for v in t.ShapeAsNumpy()) if t.ShapeLength() else ()
    if t.ShapeSignatureLength():
        sig = [int(v) for v in t.ShapeSignatureAsNumpy()]
        shape = tuple(-1 if s < 0 else d for s, d in zip(sig, shape))

    data = None
    b = t.Buffer()
    if 0 < b < model.BuffersLength():
        buf = model.Buffers(b)
        raw = buf.DataAsNumpy() if buf.DataLength() else None
        if raw is not None and not isinstance(raw, int) and dtype in _NP_DTYPES:
            arr = np.frombuffer(raw.tobytes(), dtype=_NP_DTYPES[dtype])
            data = arr.reshape([max(d, 1) for d in shape]) if shape else arr.reshape(())

    quant = None
    q = t.Quantization()
    if q is not None and q.ScaleLength():
        zp = q.ZeroPointAsNumpy() if q.ZeroPointLength() else np.zeros(q.ScaleLength(), np.int64)
        quant = g.Quantization(np.asarray(q.ScaleAsNumpy(), np.float32).copy(),
                               np.asarray(zp, np.int64).copy(), int(q.QuantizedDimension()))
    return g.Tensor(idx, name, dtype, shape, data, quant)


def load(data: bytes) -> g.Graph:
    """Parse flat-schema bytes into a :class:`Graph`.

    Raises UnsupportedFormat for anything that is not a readable model.
    """
    if len(data) < 8 or data[4:8] != FILE_IDENTIFIER:
        raise UnsupportedFormat("missing TFL3 file identifier")
    try:
        Model = _m("Model").Model
        model = Model.GetRootAs(bytearray(data), 0)
        if model.SubgraphsLength() < 1:
            raise UnsupportedFormat("model has no subgraphs")
        sg = model.Subgraphs(0)
        tensors = [_read_tensor(i, sg.Tensors(i), model) for i in range(sg.TensorsLength())]
        codes = []
        for i in range(model.OperatorCodesLength()):
            oc = model.OperatorCodes(i)
            codes.append(max(int(oc.BuiltinCode()), int(oc.DeprecatedBuiltinCode())))
        nodes = []
        for i in range(sg.OperatorsLength()):
            op = sg.Operators(i)
            code = codes[op.OpcodeIndex()]
            raw_name = _builtin_name(code)
            outputs = [int(v) for v in op.OutputsAsNumpy()] if op.OutputsLength() else []
            inputs = [int(v) for v in op.InputsAsNumpy()] if op.InputsLength() else []
            name = tensors[outputs[0]].name if outputs else f"op_{i}"
            nodes.append(g.Node(i, name, _OPS.get(code, raw_name), inputs, outputs,
                                _read_options(code, op), raw_name))
        inputs = [int(v) for v in sg.InputsAsNumpy()] if sg.InputsLength() else []
        outputs = [int(v) for v in sg.OutputsAsNumpy()] if sg.OutputsLength() else []
    except UnsupportedFormat:
        raise
    except Exception as exc:  # malformed flatbuffers surface as assorted errors
        raise UnsupportedFormat(f"unreadable flat-schema model: {exc!r}") from exc
    for t in inputs + outputs:
        if not 0 <= t < len(tensors):
            raise UnsupportedFormat(f"I/O tensor index {t} out of range")
    return g.Graph(g.FLAT_SCHEMA, tensors, nodes, inputs, outputs)


# -- writer -------------------------------------------------------------------

def _int_vector(builder, values, start_fn):
    start_fn(builder, len(values))
    for v in reversed(values):
        builder.PrependInt32(int(v))
    return builder.EndVector()


def _aligned_bytes(builder, raw: bytes, alignment: int = 16):
    builder.StartVector(1, len(raw), alignment)
    builder.head = builder.head - len(raw)
    builder.Bytes[builder.Head():builder.Head() + len(raw)] = raw
    return builder.EndVector()


def _write_options(builder, node: g.Node):
    op, o = node.op, node.options
    act = o.get("activation")
    if act not in _ACTIVATION_CODES:
        raise ExportUnsupported(f"{op} with activation {act}")
    act = _ACTIVATION_CODES[act]
    BO = _m("BuiltinOptions").BuiltinOptions
    pad = {"same": 0, "valid": 1}
    if op == g.CONV2D:
        m = _m("Conv2DOptions")
        m.Conv2DOptionsStart(builder)
        m.Conv2DOptionsAddPadding(builder, pad[o["padding"]])
        m.Conv2DOptionsAddStrideH(builder, o["strides"][0])
        m.Conv2DOptionsAddStrideW(builder, o["strides"][1])
        m.Conv2DOptionsAddDilationHFactor(builder, o.get("dilation", (1, 1))[0])
        m.Conv2DOptionsAddDilationWFactor(builder, o.get("dilation", (1, 1))[1])
        m.Conv2DOptionsAddFusedActivationFunction(builder, act)
        return BO.Conv2DOptions, m.Conv2DOptionsEnd(builder)
    if op == g.DEPTHWISE_CONV2D:
        m = _m("DepthwiseConv2DOptions")
        m.DepthwiseConv2DOptionsStart(builder)
        m.DepthwiseConv2DOptionsAddPadding(builder, pad[o["padding"]])
        m.DepthwiseConv2DOptionsAddStrideH(builder, o["strides"][0])
        m.DepthwiseConv2DOptionsAddStrideW(builder, o["strides"][1])
        m.DepthwiseConv2DOptionsAddDilationHFactor(builder, o.get("dilation", (1, 1))[0])
        m.DepthwiseConv2DOptionsAddDilationWFactor(builder, o.get("dilation", (1, 1))[1])
        m.DepthwiseConv2DOptionsAddDepthMultiplier(builder, o.get("depth_multiplier", 1))
        m.DepthwiseConv2DOptionsAddFusedActivationFunction(builder, act)
        return BO.DepthwiseConv2DOptions, m.DepthwiseConv2DOptionsEnd(builder)
    if op in (g.MAX_POOL, g.AVG_POOL):
        m = _m("Pool2DOptions")
        m.Pool2DOptionsStart(builder)
        m.Pool2DOptionsAddPadding(builder, pad[o["padding"]])
        m.Pool2DOptionsAddStrideH(builder, o["strides"][0])
        m.Pool2DOptionsAddStrideW(builder, o["strides"][1])
        m.Pool2DOptionsAddFilterHeight(builder, o["pool_size"][0])
        m.Pool2DOptionsAddFilterWidth(builder, o["pool_size"][1])
        m.Pool2DOptionsAddFusedActivationFunction(builder, act)
        return BO.Pool2DOptions, m.Pool2DOptionsEnd(builder)
    if op == g.DENSE:
        m = _m("FullyConnectedOptions")
        m.FullyConnectedOptionsStart(builder)
        m.FullyConnectedOptionsAddFusedActivationFunction(builder, act)
        m.FullyConnectedOptionsAddKeepNumDims(builder, bool(o.get("keep_num_dims", False)))
        return BO.FullyConnectedOptions, m.FullyConnectedOptionsEnd(builder)
    if op == g.SOFTMAX:
        m = _m("SoftmaxOptions")
        m.SoftmaxOptionsStart(builder)
        m.SoftmaxOptionsAddBeta(builder, float(o.get("beta", 1.0)))
        return BO.SoftmaxOptions, m.SoftmaxOptionsEnd(builder)
    if op == g.ADD:
        m = _m("AddOptions")
        m.AddOptionsStart(builder)
        m.AddOptionsAddFusedActivationFunction(builder, act)
        return BO.AddOptions, m.AddOptionsEnd(builder)
    if op == g.RESHAPE:
        m = _m("ReshapeOptions")
        shape = list(o.get("new_shape", ()))
        vec = _int_vector(builder, shape, m.ReshapeOptionsStartNewShapeVector)
        m.ReshapeOptionsStart(builder)
        m.ReshapeOptionsAddNewShape(builder, vec)
        return BO.ReshapeOptions, m.ReshapeOptionsEnd(builder)
    if op == g.MEAN:
        m = _m("ReducerOptions")
        m.ReducerOptionsStart(builder)
        m.ReducerOptionsAddKeepDims(builder, bool(o.get("keep_dims", False)))
        return BO.ReducerOptions, m.ReducerOptionsEnd(builder)
    return BO.NONE, None


def dump(graph: g.Graph, description: str = "") -> bytes:
    """Serialize a float :class:`Graph` to flat-schema bytes."""
    graph_inputs = set(graph.inputs)
    for node in graph.nodes:
        if node.op not in _OP_CODES or node.op == g.QUANTIZE:
            raise ExportUnsupported(node.op)
        # the only integer arithmetic written back is the raw-input shim
        if node.op == g.DEQUANTIZE and node.inputs[0] not in graph_inputs:
            raise ExportUnsupported("Dequantize of an inner tensor")

    builder = flatbuffers.Builder(1024)
    Buf, Ten, Op, OpC, SG, Mod = (_m(n) for n in
                                  ("Buffer", "Tensor", "Operator", "OperatorCode", "SubGraph", "Model"))

    # buffer 0 is the conventional empty sentinel
    buffer_of = {}
    buffer_offsets = []
    Buf.BufferStart(builder)
    buffer_offsets.append(Buf.BufferEnd(builder))
    for t in graph.tensors:
        if t.data is None:
            continue
        if t.dtype not in _NP_DTYPES:
            raise ExportUnsupported(f"tensor dtype {t.dtype}")
        raw = np.ascontiguousarray(t.data, dtype=_NP_DTYPES[t.dtype]).tobytes()
        vec = _aligned_bytes(builder, raw)
        Buf.BufferStart(builder)
        Buf.BufferAddData(builder, vec)
        buffer_of[t.index] = len(buffer_offsets)
        buffer_offsets.append(Buf.BufferEnd(builder))

    QP = _m("QuantizationParameters")
    tensor_offsets = []
    for t in graph.tensors:
        name = builder.CreateString(t.name)
        quant = None
        if t.quantization is not None:
            scale = np.atleast_1d(np.asarray(t.quantization.scale, np.float32))
            zp = np.atleast_1d(np.asarray(t.quantization.zero_point, np.int64))
            QP.QuantizationParametersStartScaleVector(builder, len(scale))
            for v in reversed(scale):
                builder.PrependFloat32(float(v))
            scale_vec = builder.EndVector()
            QP.QuantizationParametersStartZeroPointVector(builder, len(zp))
            for v in reversed(zp):
                builder.PrependInt64(int(v))
            zp_vec = builder.EndVector()
            QP.QuantizationParametersStart(builder)
            QP.QuantizationParametersAddScale(builder, scale_vec)
            QP.QuantizationParametersAddZeroPoint(builder, zp_vec)
            QP.QuantizationParametersAddQuantizedDimension(builder, int(t.quantization.axis or 0))
            quant = QP.QuantizationParametersEnd(builder)
        concrete = [max(int(d), 1) for d in t.shape]
        shape = _int_vector(builder, concrete, Ten.TensorStartShapeVector)
        signature = None
        if any(int(d) < 0 for d in t.shape):
            signature = _int_vector(builder, [int(d) for d in t.shape],
                                    Ten.TensorStartShapeSignatureVector)
        Ten.TensorStart(builder)
        Ten.TensorAddShape(builder, shape)
        if signature is not None:
            Ten.TensorAddShapeSignature(builder, signature)
        Ten.TensorAddType(builder, _TYPE_CODES[t.dtype])
        Ten.TensorAddBuffer(builder, buffer_of.get(t.index, 0))
        Ten.TensorAddName(builder, name)
        if quant is not None:
            Ten.TensorAddQuantization(builder, quant)
        tensor_offsets.append(Ten.TensorEnd(builder))

    codes: list[int] = []
    op_offsets = []
    for node in graph.nodes:
        code = _OP_CODES[node.op]
        if code not in codes:
            codes.append(code)
        opt_type, opt = _write_options(builder, node)
        ins = _int_vector(builder, node.inputs, Op.OperatorStartInputsVector)
        outs = _int_vector(builder, node.outputs, Op.OperatorStartOutputsVector)
        Op.OperatorStart(builder)
        Op.OperatorAddOpcodeIndex(builder, codes.index(code))
        Op.OperatorAddInputs(builder, ins)
        Op.OperatorAddOutputs(builder, outs)
        if opt is not None:
            Op.OperatorAddBuiltinOptionsType(builder, opt_type)
            Op.OperatorAddBuiltinOptions(builder, opt)
        op_offsets.append(Op.OperatorEnd(builder))

    def table_vector(start_fn, offsets):
        start_fn(builder, len(offsets))
        for off in reversed(offsets):
            builder.PrependUOffsetTRelative(off)
        return builder.EndVector()

    tensors_vec = table_vector(SG.SubGraphStartTensorsVector, tensor_offsets)
    ops_vec = table_vector(SG.SubGraphStartOperatorsVector, op_offsets)
    in_vec = _int_vector(builder, graph.inputs, SG.SubGraphStartInputsVector)
    out_vec = _int_vector(builder, graph.outputs, SG.SubGraphStartOutputsVector)
    sg_name = builder.CreateString("main")
    SG.SubGraphStart(builder)
    SG.SubGraphAddTensors(builder, tensors_vec)
    SG.SubGraphAddInputs(builder, in_vec)
    SG.SubGraphAddOutputs(builder, out_vec)
    SG.SubGraphAddOperators(builder, ops_vec)
    SG.SubGraphAddName(builder, sg_name)
    subgraph = SG.SubGraphEnd(builder)

    code_offsets = []
    for code in codes:
        OpC.OperatorCodeStart(builder)
        OpC.OperatorCodeAddDeprecatedBuiltinCode(builder, min(code, 127))
        OpC.OperatorCodeAddBuiltinCode(builder, code)
        OpC.OperatorCodeAddVersion(builder, 1)
        code_offsets.append(OpC.OperatorCodeEnd(builder))

    codes_vec = table_vector(Mod.ModelStartOperatorCodesVector, code_offsets)
    subgraphs_vec = table_vector(Mod.ModelStartSubgraphsVector, [subgraph])
    buffers_vec = table_vector(Mod.ModelStartBuffersVector, buffer_offsets)
    desc = builder.CreateString(description or "ondevice_backdoor export")
    Mod.ModelStart(builder)
    Mod.ModelAddVersion(builder, SCHEMA_VERSION)
    Mod.ModelAddOperatorCodes(builder, codes_vec)
    Mod.ModelAddSubgraphs(builder, subgraphs_vec)
    Mod.ModelAddDescription(builder, desc)
    Mod.ModelAddBuffers(builder, buffers_vec)
    builder.Finish(Mod.ModelEnd(builder), file_identifier=FILE_IDENTIFIER)
    return bytes(builder.Output())
