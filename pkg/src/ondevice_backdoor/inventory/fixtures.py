"""Synthetic app packages standing in for a crawled market corpus."""

from __future__ import annotations

import zipfile
from pathlib import Path

from .elf import build_elf

FILLER = b"GCC: (GNU) 12.2.0\0libc.so\0malloc\0%s: %d\0"


def native_library(identifiers=(), filler: bytes = FILLER) -> bytes:
    """ELF shared object whose .rodata holds `identifiers` among filler."""
    rodata = filler + b"\0".join(identifiers) + b"\0"
    return build_elf({".text": b"\x1f\x20\x03\xd5" * 8, ".rodata": rodata,
                      ".data": b"\0" * 16})


def write_package(path, entries: dict[str, bytes]) -> Path:
    """Write a ZIP-container package with deterministic entry metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, entries[name])
    return path


def base_entries() -> dict[str, bytes]:
    return {
        "AndroidManifest.xml": b"\x03\x00\x08\x00" + b"\0" * 60,
        "classes.dex": b"dex\n035\0" + b"\0" * 104,
        "res/layout/main.xml": b"\x03\x00\x08\x00" + b"\0" * 28,
        "assets/readme.txt": b"about this app\n",
    }


def build_corpus(out_dir, model_bytes: bytes, labels: list[str], n_dl: int = 5,
                 n_plain: int = 5, framework_identifiers=(b"TfLiteInterpreterCreate",
                                                          b"TfLiteTensorData")) -> dict[str, bool]:
    """Write `n_dl` DL packages and `n_plain` ordinary ones.

    Returns package file name -> ground-truth "is DL app".
    """
    out_dir = Path(out_dir)
    truth = {}
    label_text = ("\n".join(labels) + "\n").encode()
    for i in range(n_dl):
        entries = base_entries()
        entries[f"lib/arm64-v8a/libtflite_jni_{i}.so"] = native_library(framework_identifiers)
        entries["lib/arm64-v8a/libc++_shared.so"] = native_library((b"std::bad_alloc",))
        model_dir = "assets" if i % 2 == 0 else "res/raw"
        entries[f"{model_dir}/classifier_{i}.tflite"] = model_bytes
        entries[f"{model_dir}/labels_{i}.txt"] = label_text
        name = f"com.example.dl{i}.apk"
        write_package(out_dir / name, entries)
        truth[name] = True
    for i in range(n_plain):
        entries = base_entries()
        if i % 2 == 0:
            entries["lib/armeabi-v7a/libimage_utils.so"] = native_library(
                (b"png_create_read_struct", b"tensor of doom"))
        entries[f"assets/config_{i}.json"] = b'{"theme": "dark"}'
        name = f"com.example.plain{i}.apk"
        write_package(out_dir / name, entries)
        truth[name] = False
    return truth
