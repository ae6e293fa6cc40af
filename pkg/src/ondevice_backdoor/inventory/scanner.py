"""App-package scanning: framework detection, model harvesting, label files."""

from __future__ import annotations

import hashlib
import json
import logging
import posixpath
import zipfile
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ..errors import CorruptArchive, MissingRodata, NotAnApk, NotAnElf, UnreadableLabelFile
from ..formats import FLAT_SCHEMA, GRAPH_PROTO, UNKNOWN_FORMAT, UNVALIDATED, validate_model
from .elf import read_rodata

log = logging.getLogger(__name__)

MODEL_DIRS = ("assets/", "res/raw/")
NATIVE_DIR = "lib/"
MODEL_SUFFIXES = {".pb": GRAPH_PROTO, ".tflite": FLAT_SCHEMA, ".lite": FLAT_SCHEMA,
                  ".bin": UNKNOWN_FORMAT, ".tensorflow": UNKNOWN_FORMAT}
LABEL_SUFFIXES = (".txt", ".json")
LABEL_KEYWORDS = ("label", "labels", "class", "classes")

TENSORFLOW = "TensorFlow"
TFLITE = "TFLite"
UNKNOWN_FRAMEWORK = "unknown"


@dataclass(frozen=True)
class FrameworkSignature:
    framework_id: str
    identifier_strings: tuple[bytes, ...]

    def __post_init__(self):
        if not self.identifier_strings:
            raise ValueError("a signature needs at least one identifier string")
        for s in self.identifier_strings:
            if not s or not s.isascii() or b"*" in s or b"?" in s:
                raise ValueError(f"identifier {s!r} must be plain ASCII without wildcards")


# Only the TensorFlow pair is documented for real libraries; the TFLite
# entry is a placeholder chosen from symbols the TFLite C API exports.
DEFAULT_SIGNATURES = (
    FrameworkSignature(TENSORFLOW, (b"TF_AllocateTensor", b"tensorflow")),
    FrameworkSignature(TFLITE, (b"TfLiteInterpreterCreate", b"TfLiteTensorData")),
)

# which frameworks can host a given model format
_FORMAT_FRAMEWORKS = {FLAT_SCHEMA: (TFLITE, TENSORFLOW), GRAPH_PROTO: (TENSORFLOW,)}


@dataclass
class ModelCandidate:
    archive_path: str
    format_hint: str
    size_bytes: int
    validation: str = UNVALIDATED
    reason: str = ""
    framework: str = UNKNOWN_FRAMEWORK
    sha256: str = ""


@dataclass
class LabelFileRecord:
    archive_path: str
    labels: list[str]
    duplicates: list[str] = field(default_factory=list)
    error: str = ""

    @property
    def label_count(self) -> int:
        return len(self.labels)


@dataclass
class InventoryRecord:
    package_id: str
    package_sha256: str
    frameworks_detected: set[str]
    model_candidates: list[ModelCandidate]
    label_files: list[LabelFileRecord]
    native_libraries: list[str]
    notes: list[str]
    scan_timestamp: datetime

    @property
    def is_dl_app(self) -> bool:
        return bool(self.frameworks_detected)

    @property
    def flagged_for_review(self) -> bool:
        return not self.frameworks_detected and bool(self.model_candidates)

    def to_dict(self, include_timestamp: bool = True) -> dict:
        out = {
            "package_id": self.package_id,
            "package_sha256": self.package_sha256,
            "is_dl_app": self.is_dl_app,
            "flagged_for_review": self.flagged_for_review,
            "frameworks_detected": sorted(self.frameworks_detected),
            "native_libraries": list(self.native_libraries),
            "model_candidates": [
                {"archive_path": c.archive_path, "format_hint": c.format_hint,
                 "size_bytes": c.size_bytes, "validation": c.validation, "reason": c.reason,
                 "framework": c.framework, "sha256": c.sha256}
                for c in self.model_candidates
            ],
            "label_files": [
                {"archive_path": r.archive_path, "label_count": r.label_count,
                 "labels": list(r.labels), "duplicates": list(r.duplicates), "error": r.error}
                for r in self.label_files
            ],
            "notes": list(self.notes),
        }
        if include_timestamp:
            out["scan_timestamp"] = self.scan_timestamp.isoformat()
        return out

    def to_json_line(self, include_timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(include_timestamp), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "InventoryRecord":
        ts = d.get("scan_timestamp")
        return cls(
            package_id=d["package_id"],
            package_sha256=d.get("package_sha256", ""),
            frameworks_detected=set(d["frameworks_detected"]),
            model_candidates=[ModelCandidate(**c) for c in d["model_candidates"]],
            label_files=[LabelFileRecord(r["archive_path"], list(r["labels"]),
                                         list(r.get("duplicates", [])), r.get("error", ""))
                         for r in d["label_files"]],
            native_libraries=list(d.get("native_libraries", [])),
            notes=list(d.get("notes", [])),
            scan_timestamp=datetime.fromisoformat(ts) if ts else datetime.now(timezone.utc),
        )


def detect_frameworks(native_library_bytes: bytes,
                      signatures: Iterable[FrameworkSignature] = DEFAULT_SIGNATURES,
                      mode: str = "all") -> set[str]:
    """Framework ids whose identifier strings all (or any) occur in rodata.

    Raises NotAnElf for non-ELF input; a library without read-only data
    yields an empty set.
    """
    if mode not in ("all", "any"):
        raise ValueError("mode must be 'all' or 'any'")
    try:
        rodata = read_rodata(native_library_bytes)
    except MissingRodata:
        log.debug("ELF without .rodata; treating as no frameworks")
        return set()
    test = all if mode == "all" else any
    return {sig.framework_id for sig in signatures
            if test(s in rodata for s in sig.identifier_strings)}


def _entries(file_tree: Mapping[str, bytes] | Iterable[str]) -> list[str]:
    return sorted(p for p in file_tree if not p.endswith("/"))


def find_model_candidates(file_tree: Mapping[str, bytes],
                          suffixes: Mapping[str, str] = MODEL_SUFFIXES,
                          model_dirs: tuple[str, ...] = MODEL_DIRS) -> list[ModelCandidate]:
    out = []
    for path in _entries(file_tree):
        if not path.startswith(model_dirs):
            continue
        ext = posixpath.splitext(path)[1].lower()
        if ext in suffixes:
            out.append(ModelCandidate(path, suffixes[ext], len(file_tree[path])))
    return out


def parse_labels(raw: bytes, path: str) -> list[str]:
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise UnreadableLabelFile(f"{path}: not UTF-8 text") from exc
    if path.lower().endswith(".json"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UnreadableLabelFile(f"{path}: {exc}") from exc
        return [s.strip() for s in _json_labels(obj, path)]
    return [line.strip() for line in text.splitlines() if line.strip()]


def _json_labels(obj, path) -> list[str]:
    if isinstance(obj, list):
        return [str(x) for x in obj]
    if isinstance(obj, dict):
        for key in ("labels", "classes", "label", "class_names"):
            if isinstance(obj.get(key), list):
                return [str(x) for x in obj[key]]
        if obj and all(str(k).lstrip("-").isdigit() for k in obj):
            return [str(obj[k]) for k in sorted(obj, key=int)]
        if obj and all(isinstance(v, int) for v in obj.values()):
            return [k for k, _ in sorted(obj.items(), key=lambda kv: kv[1])]
    raise UnreadableLabelFile(f"{path}: no ordered label collection found")


def find_label_files(file_tree: Mapping[str, bytes],
                     keywords: Iterable[str] = LABEL_KEYWORDS,
                     suffixes: tuple[str, ...] = LABEL_SUFFIXES,
                     search_dirs: tuple[str, ...] = MODEL_DIRS) -> list[LabelFileRecord]:
    keywords = tuple(k.lower() for k in keywords)
    out = []
    for path in _entries(file_tree):
        if not path.startswith(search_dirs) or not path.lower().endswith(suffixes):
            continue
        base = posixpath.basename(path).lower()
        if not any(k in base for k in keywords):
            continue
        try:
            labels = parse_labels(file_tree[path], path)
        except UnreadableLabelFile as exc:
            out.append(LabelFileRecord(path, [], error=str(exc)))
            continue
        dups = sorted(k for k, c in Counter(labels).items() if c > 1)
        out.append(LabelFileRecord(path, labels, dups))
    return out


# zipfile signals damaged headers through several exception types
_ZIP_ERRORS = (zipfile.BadZipFile, OSError, EOFError, NotImplementedError, ValueError)


class ZipTree(Mapping):
    """Lazy path -> bytes view over the ZIP entries a scan needs."""

    def __init__(self, zf: zipfile.ZipFile, prefixes=MODEL_DIRS + (NATIVE_DIR,)):
        self._zf = zf
        self._names = sorted(n for n in zf.namelist()
                             if n.startswith(prefixes) and not n.endswith("/"))
        self._cache: dict[str, bytes] = {}

    def __getitem__(self, name):
        if name not in self._cache:
            if name not in self._names:
                raise KeyError(name)
            try:
                self._cache[name] = self._zf.read(name)
            except _ZIP_ERRORS as exc:
                raise CorruptArchive(f"{name}: {exc}") from exc
        return self._cache[name]

    def __iter__(self):
        return iter(self._names)

    def __len__(self):
        return len(self._names)


def scan_apk(package_path, signatures: Iterable[FrameworkSignature] = DEFAULT_SIGNATURES,
             mode: str = "all", label_keywords: Iterable[str] = LABEL_KEYWORDS,
             model_suffixes: Mapping[str, str] = MODEL_SUFFIXES) -> InventoryRecord:
    """Scan one app package and aggregate everything the attack needs."""
    path = Path(package_path)
    signatures = tuple(signatures)
    raw = path.read_bytes()
    if not zipfile.is_zipfile(path):
        raise NotAnApk(f"{path} is not a ZIP container")
    try:
        zf = zipfile.ZipFile(path)
    except _ZIP_ERRORS as exc:
        raise CorruptArchive(f"{path}: {exc}") from exc

    notes: list[str] = []
    with zf:
        tree = ZipTree(zf)
        frameworks: set[str] = set()
        libs = [p for p in tree if p.startswith(NATIVE_DIR) and p.endswith(".so")]
        for lib in libs:
            try:
                found = detect_frameworks(tree[lib], signatures, mode)
            except NotAnElf:
                notes.append(f"{lib}: not an ELF image")
                continue
            frameworks |= found

        candidates = find_model_candidates(tree, model_suffixes)
        for c in candidates:
            data = tree[c.archive_path]
            c.sha256 = hashlib.sha256(data).hexdigest()
            v = validate_model(data, c.format_hint)
            c.validation, c.reason = v.status, v.reason
            if v:
                hosts = [f for f in _FORMAT_FRAMEWORKS.get(v.format, ()) if f in frameworks]
                c.framework = hosts[0] if hosts else UNKNOWN_FRAMEWORK
        labels = find_label_files(tree, label_keywords)

    shas = Counter(c.sha256 for c in candidates)
    for c in candidates:
        if shas[c.sha256] > 1:
            notes.append(f"{c.archive_path}: duplicate model bytes")
    if not frameworks and candidates:
        notes.append("model files present but no framework library matched; review")
    return InventoryRecord(
        package_id=path.stem,
        package_sha256=hashlib.sha256(raw).hexdigest(),
        frameworks_detected=frameworks,
        model_candidates=candidates,
        label_files=labels,
        native_libraries=libs,
        notes=notes,
        scan_timestamp=datetime.now(timezone.utc),
    )
