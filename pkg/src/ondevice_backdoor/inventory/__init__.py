"""Harvest on-device models and their label files from app packages."""

from .scanner import (
    DEFAULT_SIGNATURES,
    LABEL_KEYWORDS,
    MODEL_SUFFIXES,
    TENSORFLOW,
    TFLITE,
    UNKNOWN_FRAMEWORK,
    FrameworkSignature,
    InventoryRecord,
    LabelFileRecord,
    ModelCandidate,
    detect_frameworks,
    find_label_files,
    find_model_candidates,
    parse_labels,
    scan_apk,
)
from ..formats import validate_model

__all__ = [
    "DEFAULT_SIGNATURES", "LABEL_KEYWORDS", "MODEL_SUFFIXES", "TENSORFLOW", "TFLITE",
    "UNKNOWN_FRAMEWORK", "FrameworkSignature", "InventoryRecord", "LabelFileRecord",
    "ModelCandidate", "detect_frameworks", "find_label_files", "find_model_candidates",
    "parse_labels", "scan_apk", "validate_model",
]
