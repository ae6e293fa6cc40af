import json
import re
import subprocess
import shutil
import zipfile

import pytest
from hypothesis import given, strategies as st

from ondevice_backdoor.errors import CorruptArchive, MissingRodata, NotAnApk, NotAnElf
from ondevice_backdoor.formats import FLAT_SCHEMA, GRAPH_PROTO, INVALID, UNKNOWN_FORMAT, VALID
from ondevice_backdoor.inventory import (DEFAULT_SIGNATURES, TENSORFLOW, TFLITE, FrameworkSignature,
                                         detect_frameworks, find_label_files, find_model_candidates,
                                         parse_labels, scan_apk, validate_model)
from ondevice_backdoor.inventory.elf import ELFCLASS32, build_elf, read_rodata, read_sections
from ondevice_backdoor.inventory.fixtures import base_entries, build_corpus, native_library, write_package
from ondevice_backdoor.errors import UnreadableLabelFile

TF_LIB = native_library((b"TF_AllocateTensor", b"tensorflow"))
TFLITE_LIB = native_library((b"TfLiteInterpreterCreate", b"TfLiteTensorData"))


# -- ELF ------------------------------------------------------------------------

@pytest.mark.skipif(shutil.which("readelf") is None, reason="binutils not installed")
@pytest.mark.parametrize("elf_class,little", [(2, True), (1, True), (2, False), (1, False)])
def test_sections_match_readelf(tmp_path, elf_class, little):
    data = build_elf({".text": b"\x00" * 12, ".rodata": b"hello\0world\0", ".rodata.str1": b"abc\0"},
                     elf_class=elf_class, little_endian=little)
    path = tmp_path / "lib.so"
    path.write_bytes(data)
    out = subprocess.run(["readelf", "-S", "-W", str(path)], capture_output=True, text=True).stdout
    oracle = {}
    for m in re.finditer(r"\]\s+(\.\S+)\s+\S+\s+[0-9a-f]+\s+([0-9a-f]+)\s+([0-9a-f]+)", out):
        oracle[m.group(1)] = (int(m.group(2), 16), int(m.group(3), 16))
    ours = {s.name: (s.offset, s.size) for s in read_sections(data) if s.name}
    assert ours == oracle


@pytest.mark.skipif(shutil.which("readelf") is None, reason="binutils not installed")
def test_rodata_strings_match_readelf(tmp_path):
    path = tmp_path / "lib.so"
    path.write_bytes(TF_LIB)
    out = subprocess.run(["readelf", "-p", ".rodata", str(path)], capture_output=True, text=True).stdout
    dumped = re.findall(r"\[\s*[0-9a-f]+\]\s+(.*)", out)
    rodata = read_rodata(TF_LIB)
    for s in dumped:
        assert s.encode() in rodata
    assert "TF_AllocateTensor" in dumped


def test_detect_tensorflow_pair():
    assert detect_frameworks(TF_LIB) == {TENSORFLOW}


def test_detect_planted_tflite_strings():
    assert detect_frameworks(TFLITE_LIB) == {TFLITE}


def test_detect_nothing():
    assert detect_frameworks(native_library((b"png_create_read_struct",))) == set()


def test_all_mode_needs_every_identifier():
    lib = native_library((b"tensorflow",))
    assert detect_frameworks(lib) == set()
    assert detect_frameworks(lib, mode="any") == {TENSORFLOW}


def test_strings_outside_rodata_are_ignored():
    lib = build_elf({".text": b"TF_AllocateTensor\0tensorflow\0", ".rodata": b"nothing\0"})
    assert detect_frameworks(lib) == set()


def test_not_an_elf():
    with pytest.raises(NotAnElf):
        detect_frameworks(b"MZ\x90\x00" + b"\0" * 60)


def test_missing_rodata_means_no_frameworks():
    lib = build_elf({".text": b"\0" * 8})
    with pytest.raises(MissingRodata):
        read_rodata(lib)
    assert detect_frameworks(lib) == set()


def test_big_endian_32bit_elf():
    lib = build_elf({".rodata": b"TF_AllocateTensor\0tensorflow\0"}, elf_class=ELFCLASS32,
                    little_endian=False)
    assert detect_frameworks(lib) == {TENSORFLOW}


@pytest.mark.parametrize("bad", [(), (b"",), (b"tensor*",), (b"caf\xc3\xa9",), (b"a?b",)])
def test_signature_invariants(bad):
    with pytest.raises(ValueError):
        FrameworkSignature("x", bad)


@given(st.lists(st.sampled_from([b"TF_AllocateTensor", b"tensorflow", b"TfLiteInterpreterCreate",
                                 b"TfLiteTensorData", b"libc", b"malloc"]), max_size=6))
def test_detection_is_subset_and_exact(planted):
    found = detect_frameworks(native_library(tuple(planted)))
    ids = {s.framework_id for s in DEFAULT_SIGNATURES}
    assert found <= ids
    for sig in DEFAULT_SIGNATURES:
        assert (sig.framework_id in found) == all(s in planted for s in sig.identifier_strings)


# -- candidates and labels ----------------------------------------------------

def test_tflite_candidate():
    c = find_model_candidates({"assets/model.tflite": b"x" * 7})
    assert [(x.archive_path, x.format_hint, x.size_bytes) for x in c] == [("assets/model.tflite", FLAT_SCHEMA, 7)]


def test_no_candidates():
    assert find_model_candidates({"assets/readme.txt": b""}) == []
    assert find_model_candidates({}) == []


def test_candidates_lexicographic():
    tree = {"res/raw/net.pb": b"a", "assets/x.bin": b"bb", "lib/arm64-v8a/m.tflite": b"c"}
    c = find_model_candidates(tree)
    assert [x.archive_path for x in c] == ["assets/x.bin", "res/raw/net.pb"]
    assert [x.format_hint for x in c] == [UNKNOWN_FORMAT, GRAPH_PROTO]


def test_label_file_lines():
    tree = {"assets/labels.txt": ("\n".join(f" c{i} " for i in range(10)) + "\n\n").encode()}
    (rec,) = find_label_files(tree)
    assert rec.label_count == 10 and rec.labels[0] == "c0"


def test_label_keyword_miss():
    assert find_label_files({"assets/data.txt": b"a\nb\n"}) == []


def test_label_json():
    (rec,) = find_label_files({"assets/label_map.json": json.dumps(["cat", "dog"]).encode()})
    assert rec.labels == ["cat", "dog"]


def test_label_json_index_map():
    assert parse_labels(b'{"1": "dog", "0": "cat"}', "x.json") == ["cat", "dog"]


def test_label_duplicates_flagged():
    (rec,) = find_label_files({"assets/classes.txt": b"a\nb\na\n"})
    assert rec.duplicates == ["a"] and rec.label_count == 3


def test_unreadable_label_file_recorded():
    (rec,) = find_label_files({"assets/labels.txt": b"\xff\xfe\xfa"})
    assert rec.label_count == 0 and rec.error
    with pytest.raises(UnreadableLabelFile):
        parse_labels(b"\xff\xfe\xfa", "labels.txt")


# -- validation -----------------------------------------------------------------

def test_validate_fixture_model(desk_model_bytes):
    assert validate_model(desk_model_bytes, FLAT_SCHEMA).status == VALID


def test_validate_truncated_and_empty(desk_model_bytes):
    assert validate_model(desk_model_bytes[:len(desk_model_bytes) // 2], FLAT_SCHEMA).status == INVALID
    assert validate_model(b"", FLAT_SCHEMA).status == INVALID


@given(st.integers(0, 64))
def test_header_prefixes_are_invalid(desk_model_bytes, n):
    assert validate_model(desk_model_bytes[:n]).status == INVALID


@given(st.binary(max_size=200))
def test_validate_never_throws(data):
    assert validate_model(data).status in (VALID, INVALID)


# -- packages -----------------------------------------------------------------

def _package(tmp_path, name, extra):
    entries = base_entries()
    entries.update(extra)
    return write_package(tmp_path / name, entries)


def test_dl_package(tmp_path, desk_model_bytes):
    p = _package(tmp_path, "a.apk", {"lib/arm64-v8a/libtflite.so": TFLITE_LIB,
                                      "assets/model.tflite": desk_model_bytes,
                                      "assets/labels.txt": b"\n".join(b"c%d" % i for i in range(10))})
    rec = scan_apk(p)
    assert rec.is_dl_app and rec.frameworks_detected == {TFLITE}
    (c,) = rec.model_candidates
    assert c.validation == VALID and c.framework == TFLITE
    assert rec.label_files[0].label_count == 10


def test_plain_package(tmp_path):
    rec = scan_apk(_package(tmp_path, "b.apk", {}))
    assert not rec.is_dl_app and rec.model_candidates == [] and not rec.flagged_for_review


def test_model_without_framework_flagged(tmp_path, desk_model_bytes):
    rec = scan_apk(_package(tmp_path, "c.apk", {"assets/model.tflite": desk_model_bytes}))
    assert not rec.frameworks_detected and rec.model_candidates
    assert rec.flagged_for_review
    assert rec.model_candidates[0].framework == "unknown"


def test_scan_deterministic(tmp_path, desk_model_bytes):
    p = _package(tmp_path, "d.apk", {"lib/arm64-v8a/libtf.so": TF_LIB, "res/raw/m.lite": desk_model_bytes})
    a, b = scan_apk(p), scan_apk(p)
    assert a.to_json_line(False) == b.to_json_line(False)


def test_adding_a_file_keeps_earlier_findings(tmp_path, desk_model_bytes):
    base = {"lib/arm64-v8a/libtf.so": TF_LIB, "assets/m.tflite": desk_model_bytes,
            "assets/labels.txt": b"a\nb\n"}
    before = scan_apk(_package(tmp_path, "e.apk", base))
    after = scan_apk(_package(tmp_path, "f.apk", {**base, "assets/extra.pb": b"junk",
                                                  "assets/classes.json": b'["x"]'}))
    assert {c.archive_path for c in before.model_candidates} <= {c.archive_path for c in after.model_candidates}
    assert {r.archive_path for r in before.label_files} <= {r.archive_path for r in after.label_files}


def test_not_an_apk(tmp_path):
    p = tmp_path / "x.apk"
    p.write_bytes(b"definitely not a zip")
    with pytest.raises(NotAnApk):
        scan_apk(p)


def test_corrupt_archive(tmp_path, desk_model_bytes):
    p = _package(tmp_path, "g.apk", {"assets/m.tflite": desk_model_bytes})
    raw = bytearray(p.read_bytes())
    cd = raw.rfind(b"PK\x01\x02")
    raw[cd + 4:cd + 46] = b"\xff" * 42  # wreck a central directory entry
    p.write_bytes(bytes(raw))
    with pytest.raises((CorruptArchive, NotAnApk)):
        scan_apk(p)


def test_record_round_trip(tmp_path, desk_model_bytes):
    from ondevice_backdoor.inventory import InventoryRecord
    rec = scan_apk(_package(tmp_path, "h.apk", {"lib/arm64-v8a/l.so": TFLITE_LIB,
                                                "assets/m.tflite": desk_model_bytes}))
    again = InventoryRecord.from_dict(json.loads(rec.to_json_line()))
    assert again.to_json_line() == rec.to_json_line()


def test_fixture_corpus_precision_recall(tmp_path, desk_model_bytes):
    truth = build_corpus(tmp_path, desk_model_bytes, [f"c{i}" for i in range(10)])
    predicted = {name: scan_apk(tmp_path / name).is_dl_app for name in truth}
    tp = sum(predicted[n] and truth[n] for n in truth)
    assert tp == sum(truth.values()) == sum(predicted.values()) == 5
    assert len(truth) == 10
    assert zipfile.is_zipfile(tmp_path / next(iter(truth)))
