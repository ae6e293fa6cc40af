"""Turn a harvested on-device model into a trainable one and back."""

from .export import export_deployable, to_graph
from .model import InputSpec, LayerSpec, ParameterSlot, TorchGraph, TrainableModel, relayout
from .reconstruct import SUPPORTED_OPERATORS, convert, map_parameters, reconstruct_trainable
from .verify import EquivalenceReport, verify_equivalence

__all__ = [
    "EquivalenceReport", "InputSpec", "LayerSpec", "ParameterSlot", "SUPPORTED_OPERATORS",
    "TorchGraph", "TrainableModel", "convert", "export_deployable", "map_parameters",
    "reconstruct_trainable", "relayout", "to_graph", "verify_equivalence",
]
