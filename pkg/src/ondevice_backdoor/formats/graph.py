"""Format-neutral in-memory graph that both model loaders produce.

Operators carry canonical type names (``Conv2D``, ``Dense``, ...) so
analysis and conversion never branch on the source format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONV2D = "Conv2D"
DEPTHWISE_CONV2D = "DepthwiseConv2D"
DENSE = "Dense"
MAX_POOL = "MaxPool"
AVG_POOL = "AvgPool"
MEAN = "Mean"
RELU = "ReLU"
RELU6 = "ReLU6"
SOFTMAX = "Softmax"
ADD = "Add"
RESHAPE = "Reshape"
QUANTIZE = "Quantize"
DEQUANTIZE = "Dequantize"
BIAS_ADD = "BiasAdd"
BATCH_NORM = "FusedBatchNorm"
IDENTITY = "Identity"

FLAT_SCHEMA = "flat-schema"
GRAPH_PROTO = "graph-proto"
UNKNOWN_FORMAT = "unknown"


@dataclass
class Quantization:
    scale: np.ndarray
    zero_point: np.ndarray
    axis: int = 0

    def dequantize(self, values: np.ndarray) -> np.ndarray:
        scale = self.scale.astype(np.float64)
        zp = self.zero_point.astype(np.float64)
        if scale.size > 1:
            shape = [1] * values.ndim
            shape[self.axis] = -1
            scale = scale.reshape(shape)
            zp = zp.reshape(shape)
        return ((values.astype(np.float64) - zp) * scale).astype(np.float32)


@dataclass
class Tensor:
    index: int
    name: str
    dtype: str
    shape: tuple
    data: np.ndarray | None = None
    quantization: Quantization | None = None

    @property
    def is_constant(self) -> bool:
        return self.data is not None

    def float_data(self) -> np.ndarray:
        """Constant contents as float32, dequantized where needed."""
        if self.data is None:
            raise ValueError(f"tensor {self.name!r} holds no constant data")
        if self.quantization is not None and self.dtype in ("uint8", "int8", "int32", "int16"):
            return self.quantization.dequantize(self.data)
        return self.data.astype(np.float32)


@dataclass
class Node:
    index: int
    name: str
    op: str
    inputs: list[int]
    outputs: list[int]
    options: dict = field(default_factory=dict)
    raw_op: str = ""


@dataclass
class Graph:
    format: str
    tensors: list[Tensor]
    nodes: list[Node]
    inputs: list[int]
    outputs: list[int]

    def producers(self) -> dict[int, int]:
        return {t: n.index for n in self.nodes for t in n.outputs}

    def consumers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for n in self.nodes:
            for t in n.inputs:
                if t >= 0:
                    out.setdefault(t, []).append(n.index)
        return out

    def edges(self) -> list[tuple[int, int]]:
        prod = self.producers()
        edges = set()
        for n in self.nodes:
            for t in n.inputs:
                if t in prod:
                    edges.add((prod[t], n.index))
        return sorted(edges)

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; ties broken by lowest node index."""
        import heapq

        indeg = {n.index: 0 for n in self.nodes}
        succ: dict[int, list[int]] = {n.index: [] for n in self.nodes}
        for a, b in self.edges():
            indeg[b] += 1
            succ[a].append(b)
        heap = [i for i, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            i = heapq.heappop(heap)
            order.append(i)
            for j in succ[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(heap, j)
        if len(order) != len(self.nodes):
            raise ValueError("graph contains a cycle")
        return order
