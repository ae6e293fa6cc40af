"""Read-only decoder for frozen graph-proto (``.pb`` GraphDef) models.

A hand-rolled protobuf wire-format reader covering the handful of messages
a frozen inference graph uses (NodeDef, AttrValue, TensorProto,
TensorShapeProto), so loading a model never has to import a full DL
framework.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import UnsupportedFormat
from . import graph as g

# DataType enum values
_DT = {1: "float32", 2: "float64", 3: "int32", 4: "uint8", 5: "int16", 6: "int8",
       7: "string", 9: "int64", 10: "bool", 19: "float16"}
_NP = {"float32": np.float32, "float64": np.float64, "int32": np.int32, "uint8": np.uint8,
       "int16": np.int16, "int8": np.int8, "int64": np.int64, "bool": np.bool_,
       "float16": np.float16}

_OPS = {
    "Conv2D": g.CONV2D, "DepthwiseConv2dNative": g.DEPTHWISE_CONV2D, "MatMul": g.DENSE,
    "BiasAdd": g.BIAS_ADD, "Relu": g.RELU, "Relu6": g.RELU6, "MaxPool": g.MAX_POOL,
    "AvgPool": g.AVG_POOL, "Softmax": g.SOFTMAX, "Add": g.ADD, "AddV2": g.ADD,
    "Reshape": g.RESHAPE, "Mean": g.MEAN, "FusedBatchNorm": g.BATCH_NORM,
    "FusedBatchNormV3": g.BATCH_NORM, "Identity": g.IDENTITY,
}
_SKIP = {"NoOp"}
# ops evaluated at load time when every data input is a constant
_FOLDABLE = {"Identity", "Reshape", "Squeeze", "ExpandDims", "Cast"}


class _WireError(Exception):
    pass


def _varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = shift = 0
    while True:
        if pos >= len(buf):
            raise _WireError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise _WireError("varint too long")


def _fields(buf: bytes):
    """Yield (field_number, wire_type, value) over one message body."""
    pos = 0
    n = len(buf)
    while pos < n:
        key, pos = _varint(buf, pos)
        field, wt = key >> 3, key & 7
        if field == 0:
            raise _WireError("field number 0")
        if wt == 0:
            val, pos = _varint(buf, pos)
        elif wt == 1:
            if pos + 8 > n:
                raise _WireError("truncated fixed64")
            val = buf[pos:pos + 8]
            pos += 8
        elif wt == 2:
            ln, pos = _varint(buf, pos)
            if pos + ln > n:
                raise _WireError("truncated length-delimited field")
            val = buf[pos:pos + ln]
            pos += ln
        elif wt == 5:
            if pos + 4 > n:
                raise _WireError("truncated fixed32")
            val = buf[pos:pos + 4]
            pos += 4
        else:
            raise _WireError(f"unsupported wire type {wt}")
        yield field, wt, val


def _signed(v: int) -> int:
    return v - (1 << 64) if v >= 1 << 63 else v


def _packed_varints(val, wt) -> list[int]:
    if wt == 0:
        return [_signed(val)]
    out, pos = [], 0
    while pos < len(val):
        v, pos = _varint(val, pos)
        out.append(_signed(v))
    return out


def _packed_floats(val, wt) -> list[float]:
    if wt == 5:
        return [struct.unpack("<f", val)[0]]
    return list(struct.unpack(f"<{len(val) // 4}f", val))


def _shape(buf: bytes) -> tuple | None:
    dims = []
    for f, _, v in _fields(buf):
        if f == 2:
            size = -1
            for df, _, dv in _fields(v):
                if df == 1:
                    size = _signed(dv)
            dims.append(size)
        elif f == 3 and v:
            return None
    return tuple(dims)


def _tensor(buf: bytes) -> np.ndarray:
    dtype, shape, content = "float32", (), None
    floats, ints, int64s, bools = [], [], [], []
    for f, wt, v in _fields(buf):
        if f == 1:
            dtype = _DT.get(v, f"dt_{v}")
        elif f == 2:
            shape = _shape(v) or ()
        elif f == 4:
            content = bytes(v)
        elif f == 5:
            floats += _packed_floats(v, wt)
        elif f == 7:
            ints += _packed_varints(v, wt)
        elif f == 10:
            int64s += _packed_varints(v, wt)
        elif f == 11:
            bools += _packed_varints(v, wt)
    if dtype not in _NP:
        raise UnsupportedFormat(f"constant of unsupported dtype {dtype}")
    np_t = _NP[dtype]
    count = int(np.prod(shape)) if shape else 1
    if content is not None:
        arr = np.frombuffer(content, dtype=np_t)
    else:
        vals = floats or ints or int64s or bools
        arr = np.asarray(vals, dtype=np_t)
        if arr.size == 1 and count > 1:
            arr = np.full(count, arr[0], dtype=np_t)
        elif arr.size == 0:
            arr = np.zeros(count, dtype=np_t)
    if arr.size != count:
        raise UnsupportedFormat(f"tensor holds {arr.size} values, shape {shape}")
    return arr.reshape(shape).copy()


def _attr(buf: bytes):
    for f, wt, v in _fields(buf):
        if f == 2:
            return bytes(v).decode("utf-8", "replace")
        if f == 3:
            return _signed(v)
        if f == 4:
            return struct.unpack("<f", v)[0]
        if f == 5:
            return bool(v)
        if f == 6:
            return _DT.get(v, f"dt_{v}")
        if f == 7:
            return _shape(v)
        if f == 8:
            return _tensor(v)
        if f == 1:
            items: list = []
            for lf, lwt, lv in _fields(v):
                if lf == 3:
                    items += _packed_varints(lv, lwt)
                elif lf == 4:
                    items += _packed_floats(lv, lwt)
                elif lf == 2:
                    items.append(bytes(lv).decode("utf-8", "replace"))
                elif lf == 7:
                    items.append(_shape(lv))
            return items
    return None


def _node(buf: bytes) -> dict:
    node = {"name": "", "op": "", "inputs": [], "attr": {}}
    for f, _, v in _fields(buf):
        if f == 1:
            node["name"] = bytes(v).decode("utf-8")
        elif f == 2:
            node["op"] = bytes(v).decode("utf-8")
        elif f == 3:
            node["inputs"].append(bytes(v).decode("utf-8"))
        elif f == 5:
            key, value = "", None
            for ef, _, ev in _fields(v):
                if ef == 1:
                    key = bytes(ev).decode("utf-8")
                elif ef == 2:
                    value = _attr(ev)
            node["attr"][key] = value
    return node


def parse_nodes(data: bytes) -> list[dict]:
    try:
        nodes = [_node(v) for f, wt, v in _fields(bytes(data)) if f == 1 and wt == 2]
    except (_WireError, UnicodeDecodeError, struct.error, ValueError) as exc:
        raise UnsupportedFormat(f"unreadable graph-proto: {exc}") from exc
    if not nodes or any(not n["name"] or not n["op"] for n in nodes):
        raise UnsupportedFormat("graph-proto holds no well-formed nodes")
    return nodes


def _options(op: str, attr: dict) -> dict:
    def spatial(key):
        v = attr.get(key) or [1, 1, 1, 1]
        return (int(v[1]), int(v[2]))

    pad = str(attr.get("padding", "VALID")).lower()
    if op == "Conv2D":
        return {"padding": pad, "strides": spatial("strides"), "dilation": spatial("dilations"),
                "activation": None, "filter_layout": "HWIO"}
    if op == "DepthwiseConv2dNative":
        return {"padding": pad, "strides": spatial("strides"), "dilation": spatial("dilations"),
                "activation": None, "filter_layout": "HWCM"}
    if op in ("MaxPool", "AvgPool"):
        return {"padding": pad, "strides": spatial("strides"), "pool_size": spatial("ksize"),
                "activation": None}
    if op == "MatMul":
        layout = "OI" if attr.get("transpose_b") else "IO"
        return {"activation": None, "weight_layout": layout,
                "transpose_a": bool(attr.get("transpose_a"))}
    if op in ("FusedBatchNorm", "FusedBatchNormV3"):
        return {"epsilon": float(attr.get("epsilon") or 1e-3)}
    if op == "Mean":
        return {"keep_dims": bool(attr.get("keep_dims"))}
    if op in ("Add", "AddV2"):
        return {"activation": None}
    if op == "Softmax":
        return {"beta": 1.0}
    return {}


def load(data: bytes) -> g.Graph:
    """Decode GraphDef bytes into a :class:`Graph`."""
    raw = parse_nodes(data)
    tensors: list[g.Tensor] = []
    tensor_of: dict[str, int] = {}
    inputs: list[int] = []

    def new_tensor(name, dtype="float32", shape=(), value=None):
        t = g.Tensor(len(tensors), name, dtype, shape, value)
        tensors.append(t)
        tensor_of[name] = t.index
        return t.index

    op_nodes = []
    for n in raw:
        a = n["attr"]
        if n["op"] == "Const":
            value = a.get("value")
            if not isinstance(value, np.ndarray):
                raise UnsupportedFormat(f"Const {n['name']} without tensor value")
            dtype = next((k for k, v in _NP.items() if v == value.dtype.type), "other")
            new_tensor(n["name"] + ":0", dtype, tuple(value.shape), value)
        elif n["op"] == "Placeholder":
            shape = a.get("shape") or ()
            inputs.append(new_tensor(n["name"] + ":0", a.get("dtype", "float32"), tuple(shape)))
        elif n["op"] not in _SKIP:
            op_nodes.append(n)

    op_nodes = _fold_constants(op_nodes, tensors, tensor_of, new_tensor)
    for n in op_nodes:
        new_tensor(n["name"] + ":0", n["attr"].get("T", "float32"))

    def ref(name: str) -> int:
        base, _, port = name.partition(":")
        key = f"{base}:{port or 0}"
        if key not in tensor_of:
            raise UnsupportedFormat(f"dangling input reference {name!r}")
        return tensor_of[key]

    nodes = []
    consumed = set()
    for i, n in enumerate(op_nodes):
        ins = [ref(s) for s in n["inputs"] if not s.startswith("^")]
        consumed.update(ins)
        out = tensor_of[n["name"] + ":0"]
        nodes.append(g.Node(i, n["name"], _OPS.get(n["op"], n["op"]), ins, [out],
                            _options(n["op"], n["attr"]), n["op"]))
    outputs = [nd.outputs[0] for nd in nodes if nd.outputs[0] not in consumed]
    if not inputs:
        raise UnsupportedFormat("graph-proto has no Placeholder input")
    return g.Graph(g.GRAPH_PROTO, tensors, nodes, inputs, outputs)


def _key(name: str) -> str:
    base, _, port = name.partition(":")
    return f"{base}:{port or 0}"


def _fold_one(op: str, attr: dict, vals: list[np.ndarray]) -> np.ndarray:
    v = vals[0]
    if op == "Identity":
        return v
    if op == "Reshape":
        return v.reshape([int(d) for d in vals[1]])
    if op == "ExpandDims":
        return np.expand_dims(v, int(np.asarray(vals[1]).ravel()[0]))
    if op == "Cast":
        return v.astype(_NP.get(attr.get("DstT", "float32"), np.float32))
    dims = [d - 2 ** 64 if d >= 2 ** 63 else d for d in (attr.get("squeeze_dims") or [])]
    return np.squeeze(v, axis=tuple(dims)) if dims else np.squeeze(v)


def _fold_constants(op_nodes, tensors, tensor_of, new_tensor):
    """Replace constant-only shim chains (bias reshapes, casts) by constants."""
    pending = list(op_nodes)
    changed = True
    while changed:
        changed = False
        rest = []
        for n in pending:
            data = [_key(s) for s in n["inputs"] if not s.startswith("^")]
            if (n["op"] in _FOLDABLE and data and all(k in tensor_of for k in data)
                    and all(tensors[tensor_of[k]].data is not None for k in data)):
                value = np.asarray(_fold_one(n["op"], n["attr"], [tensors[tensor_of[k]].data for k in data]))
                dtype = next((k for k, v in _NP.items() if v == value.dtype.type), "other")
                new_tensor(n["name"] + ":0", dtype, tuple(value.shape), value)
                changed = True
            else:
                rest.append(n)
        pending = rest
    return pending
