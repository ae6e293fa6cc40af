"""Model file loaders and the validation rule used by the package scanner."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import UnsupportedFormat
from . import flatschema, graphproto
from .graph import FLAT_SCHEMA, GRAPH_PROTO, UNKNOWN_FORMAT, Graph

VALID = "valid"
INVALID = "invalid"
UNVALIDATED = "unvalidated"

_LOADERS = {FLAT_SCHEMA: flatschema.load, GRAPH_PROTO: graphproto.load}


def sniff_format(data: bytes) -> str:
    if len(data) >= 8 and data[4:8] == flatschema.FILE_IDENTIFIER:
        return FLAT_SCHEMA
    return GRAPH_PROTO


def _check_structure(graph: Graph) -> None:
    n = len(graph.tensors)
    for node in graph.nodes:
        for t in node.inputs:
            if not -1 <= t < n:
                raise UnsupportedFormat(f"node {node.name} references tensor {t}")
        for t in node.outputs:
            if not 0 <= t < n:
                raise UnsupportedFormat(f"node {node.name} writes tensor {t}")
    try:
        graph.topological_order()
    except ValueError as exc:
        raise UnsupportedFormat(str(exc)) from exc


def load_model(data: bytes, format_hint: str = UNKNOWN_FORMAT) -> Graph:
    """Load bytes with the loader for `format_hint`; ``unknown`` sniffs."""
    fmt = sniff_format(data) if format_hint == UNKNOWN_FORMAT else format_hint
    if fmt not in _LOADERS:
        raise UnsupportedFormat(f"no loader for format {format_hint!r}")
    graph = _LOADERS[fmt](bytes(data))
    _check_structure(graph)
    return graph


@dataclass(frozen=True)
class Validation:
    status: str
    reason: str = ""
    format: str = UNKNOWN_FORMAT

    def __bool__(self) -> bool:
        return self.status == VALID


def validate_model(data: bytes, format_hint: str = UNKNOWN_FORMAT) -> Validation:
    """Try to load the bytes; never raises."""
    if not data:
        return Validation(INVALID, "empty file")
    try:
        graph = load_model(data, format_hint)
    except UnsupportedFormat as exc:
        return Validation(INVALID, str(exc))
    except Exception as exc:  # arbitrary bytes must never escape as an exception
        return Validation(INVALID, f"loader failure: {exc!r}")
    if not graph.inputs:
        return Validation(INVALID, "model exposes no input tensor", graph.format)
    if not graph.outputs:
        return Validation(INVALID, "model exposes no output tensor", graph.format)
    return Validation(VALID, "", graph.format)


__all__ = ["load_model", "validate_model", "sniff_format", "Validation", "Graph",
           "VALID", "INVALID", "UNVALIDATED", "FLAT_SCHEMA", "GRAPH_PROTO", "UNKNOWN_FORMAT"]
