"""Recover the information an attack needs from a harvested model file:
graph summary, I/O signature, bound category labels and the task."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from .formats import UNKNOWN_FORMAT, load_model
from .formats import graph as g
from .formats.runtime import infer_shapes
from .inventory.scanner import LabelFileRecord, ModelCandidate

log = logging.getLogger(__name__)

BATCH = None  # symbolic batch marker inside TensorSpec.shape

IMAGE_CLASSIFICATION = "image-classification"
OBJECT_DETECTION = "object-detection"
STYLIZATION = "stylization"
POSE_DETECTION = "pose-detection"
UNKNOWN_TASK = "unknown"

_DTYPES = ("float32", "uint8", "int8", "int32")


@dataclass(frozen=True)
class TensorSpec:
    name: str
    dtype: str
    shape: tuple

    @classmethod
    def from_tensor(cls, t: g.Tensor) -> "TensorSpec":
        dtype = t.dtype if t.dtype in _DTYPES else "other"
        if dtype == "other":
            log.warning("tensor %s has unusual dtype %s", t.name, t.dtype)
        shape = tuple(BATCH if (i == 0 and d < 0) else int(d) for i, d in enumerate(t.shape))
        return cls(t.name, dtype, shape)

    def concrete_shape(self, batch: int = 1) -> tuple:
        return tuple(batch if d is BATCH else d for d in self.shape)

    def to_dict(self) -> dict:
        return {"name": self.name, "dtype": self.dtype, "shape": list(self.shape)}


@dataclass
class GraphSummary:
    node_count: int
    operator_histogram: dict[str, int]
    edges: list[tuple[int, int]]
    order: list[int]

    def to_dict(self) -> dict:
        return {"node_count": self.node_count,
                "operator_histogram": dict(sorted(self.operator_histogram.items())),
                "edges": [list(e) for e in self.edges], "order": list(self.order)}


@dataclass
class ModelInfo:
    inputs: list[TensorSpec]
    outputs: list[TensorSpec]
    labels: list[str] | None = None
    task: str = UNKNOWN_TASK
    source: ModelCandidate | None = None
    label_source: str = ""
    notes: list[str] = field(default_factory=list)
    primary_output: int = 0

    def class_count(self) -> int | None:
        shape = self.outputs[self.primary_output].shape
        if len(shape) == 2 and shape[1] is not BATCH:
            return shape[1]
        if len(shape) == 1 and shape[0] is not BATCH:
            return shape[0]
        return None

    def check(self) -> None:
        if not self.inputs or not self.outputs:
            raise ValueError("ModelInfo needs at least one input and one output")
        if self.labels is not None and len(self.labels) != self.class_count():
            raise ValueError("bound labels disagree with the class dimension")

    def to_dict(self) -> dict:
        return {
            "inputs": [s.to_dict() for s in self.inputs],
            "outputs": [s.to_dict() for s in self.outputs],
            "labels": self.labels,
            "label_source": self.label_source,
            "task": self.task,
            "primary_output": self.primary_output,
            "source": None if self.source is None else self.source.archive_path,
            "notes": list(self.notes),
        }


def _graph(model, format_hint=UNKNOWN_FORMAT) -> g.Graph:
    return model if isinstance(model, g.Graph) else load_model(model, format_hint)


def summarize_graph(model, format_hint: str = UNKNOWN_FORMAT) -> GraphSummary:
    """Operator histogram and data-flow edges of a validated model.

    `model` may be raw bytes or an already loaded Graph. Raises
    UnsupportedFormat when no loader accepts the bytes.
    """
    graph = _graph(model, format_hint)
    order = graph.topological_order()
    hist = Counter(graph.nodes[i].op for i in order)
    return GraphSummary(len(order), dict(hist), graph.edges(), order)


def io_signature(model, format_hint: str = UNKNOWN_FORMAT) -> tuple[list[TensorSpec], list[TensorSpec]]:
    graph = _graph(model, format_hint)
    if graph.format == g.GRAPH_PROTO:
        infer_shapes(graph)
    ins = [TensorSpec.from_tensor(graph.tensors[i]) for i in graph.inputs]
    outs = [TensorSpec.from_tensor(graph.tensors[i]) for i in graph.outputs]
    return ins, outs


def terminal_op(graph: g.Graph, tensor_index: int) -> str | None:
    """Operator producing an output, looking through layout/quantization shims."""
    prod = graph.producers()
    seen = set()
    while tensor_index in prod and tensor_index not in seen:
        seen.add(tensor_index)
        node = graph.nodes[prod[tensor_index]]
        if node.op not in (g.QUANTIZE, g.DEQUANTIZE, g.RESHAPE, g.IDENTITY):
            return node.op
        tensor_index = node.inputs[0]
    return None


@dataclass
class TaskRules:
    """Configurable heuristic table used by :func:`infer_task`."""

    detection_tokens: tuple[str, ...] = ("box", "score", "class", "detection", "num")
    classification_terminals: tuple[str, ...] = (g.SOFTMAX, g.DENSE)
    image_channels: tuple[int, ...] = (1, 3, 4)
    keypoint_counts: tuple[int, ...] = (13, 14, 16, 17, 21, 33)
    keypoint_coords: tuple[int, ...] = (2, 3)


def infer_task(summary: GraphSummary | None, io, terminals: list[str | None] | None = None,
               rules: TaskRules = TaskRules()) -> str:
    """Rule-based task category from output shapes and tensor-name tokens.

    `terminals` optionally lists the producing operator of each output (see
    :func:`terminal_op`); without it the summary's histogram stands in.
    """
    inputs, outputs = io
    if not outputs:
        return UNKNOWN_TASK

    if len(outputs) >= 2:
        hits = sum(any(tok in o.name.lower() for tok in rules.detection_tokens) for o in outputs)
        if hits >= 2:
            return OBJECT_DETECTION

    in_shape = inputs[0].shape if inputs else ()
    if len(outputs) == 1:
        out = outputs[0]
        rank = len(out.shape)
        if terminals is not None:
            term_ok = terminals[0] in rules.classification_terminals
        else:
            hist = summary.operator_histogram if summary else {}
            term_ok = any(op in hist for op in rules.classification_terminals)
        if rank <= 2 and term_ok and out.shape and (out.shape[-1] or 0) >= 2:
            return IMAGE_CLASSIFICATION

    for out in outputs:
        shape = out.shape
        if (len(shape) == 4 and len(in_shape) == 4 and shape[1:3] == in_shape[1:3]
                and shape[3] in rules.image_channels):
            return STYLIZATION
        if len(shape) >= 3 and shape[-1] in rules.keypoint_coords and shape[-2] in rules.keypoint_counts:
            return POSE_DETECTION
        if len(shape) == 4 and shape[3] in rules.keypoint_counts and shape[1:3] != in_shape[1:3]:
            return POSE_DETECTION
    return UNKNOWN_TASK


def bind_labels(info: ModelInfo, candidates: list[LabelFileRecord]) -> ModelInfo:
    """Bind the one label file whose count equals the class dimension.

    Several matching files with different contents leave labels unbound and
    record the ambiguity; a wrong label map is worse than none.
    """
    c = info.class_count()
    if c is None:
        info.notes.append("primary output is not classification-shaped; labels not bound")
        return info
    matches = [r for r in candidates if not r.error and r.label_count == c]
    distinct = {tuple(r.labels): r for r in matches}
    if len(distinct) == 1:
        rec = next(iter(distinct.values()))
        info.labels = list(rec.labels)
        info.label_source = rec.archive_path
        if len(matches) > 1:
            info.notes.append("identical label files: " + ", ".join(r.archive_path for r in matches))
    elif len(distinct) > 1:
        info.labels = None
        info.notes.append(f"ambiguous labels: {len(distinct)} distinct files with {c} entries: "
                          + ", ".join(r.archive_path for r in matches))
    else:
        counts = ", ".join(f"{r.archive_path}={r.label_count}" for r in candidates) or "none"
        info.labels = None
        info.notes.append(f"no label file with {c} entries (found {counts})")
    return info


def analyze(model, format_hint: str = UNKNOWN_FORMAT, label_files: list[LabelFileRecord] = (),
            source: ModelCandidate | None = None, rules: TaskRules = TaskRules()) -> ModelInfo:
    """Full analysis of one model: signature, task and (if applicable) labels."""
    graph = _graph(model, format_hint)
    summary = summarize_graph(graph)
    ins, outs = io_signature(graph)
    terminals = [terminal_op(graph, i) for i in graph.outputs]
    info = ModelInfo(ins, outs, source=source)
    info.task = infer_task(summary, (ins, outs), terminals, rules)
    if info.task == IMAGE_CLASSIFICATION:
        bind_labels(info, list(label_files))
    info.check()
    return info
