import csv
import io
import json
import math

import pytest
from hypothesis import given, strategies as st

from ondevice_backdoor.errors import InconsistentSchema
from ondevice_backdoor.report import (AVERAGE, COLUMNS, META_COLUMNS, AttackReport, build_report, plot_curves,
                                      plot_stealth, write_report)

# reference per-model ASR values for the steganographic attack and a model-rewriting baseline
STEGO_ASR = (96.36, 100.00, 99.78, 99.80, 100.00, 98.06, 99.74, 96.52, 91.88, 91.61, 86.39)
REWRITE_ASR = (83.77, 87.07, 78.79, 63.91, 84.14, 88.16, 86.41, 88.15, 91.88, 85.46, 84.90)


def _run(model="m", attack="stego", ba_normal=90.0, ba=89.0, asr=95.0, **kw):
    return AttackReport(model, attack, ba_normal, ba, asr, config_digest="d" * 8, **kw)


def test_bac_is_derived_from_accuracies():
    assert _run(ba_normal=68.07, ba=61.27).bac == pytest.approx(-6.80)
    assert _run(ba_normal=99.00, ba=99.60).bac == pytest.approx(0.60)


def test_inconsistent_bac_rejected():
    with pytest.raises(InconsistentSchema):
        _run(bac=1.0)


@pytest.mark.parametrize("kw", [{"asr": 101.0}, {"ba": -1.0}, {"mean_ms_ssim": 1.2}, {"min_ms_ssim": -0.1}])
def test_out_of_range_fields_rejected(kw):
    with pytest.raises(InconsistentSchema):
        _run(**kw)


def test_missing_digest_rejected():
    with pytest.raises(InconsistentSchema):
        AttackReport("m", "stego", 90.0, 90.0, 90.0)


def test_from_dict_rejects_unknown_fields():
    d = _run().to_dict()
    assert AttackReport.from_dict(d) == _run()
    with pytest.raises(InconsistentSchema):
        AttackReport.from_dict({**d, "extra": 1})


def test_published_asr_averages():
    runs = [_run(f"model{i}", "stego", asr=a) for i, a in enumerate(STEGO_ASR, 1)]
    runs += [_run(f"model{i}", "rewrite", asr=a) for i, a in enumerate(REWRITE_ASR, 1)]
    table = build_report(runs)
    pivot = table.pivot("ASR").splitlines()
    assert pivot[1].split() == ["model", "rewrite", "stego"]
    avg = pivot[-1].split()
    assert avg[0] == AVERAGE
    assert float(avg[1]) == pytest.approx(83.88, abs=0.005)
    assert float(avg[2]) == pytest.approx(96.38, abs=0.005)


def test_columns_and_average_row():
    runs = [_run("a", "stego", 68.07, 61.27, 90.0, mean_psnr=27.39, mean_ms_ssim=0.910, ms_ssim_scales=3),
            _run("a", "patch", 68.07, 67.0, 99.0, mean_psnr=12.20, mean_ms_ssim=0.88, ms_ssim_scales=3)]
    table = build_report(runs)
    header = next(csv.reader(io.StringIO(table.to_csv())))
    assert tuple(header) == COLUMNS + META_COLUMNS
    assert {"BA", "ASR", "BAC", "PSNR", "MS-SSIM"} <= set(COLUMNS)
    lines = [json.loads(l) for l in table.to_jsonl().splitlines()]
    assert len(lines) == 3 and lines[-1]["model"] == AVERAGE
    assert lines[-1]["PSNR"] == pytest.approx((27.39 + 12.20) / 2)
    assert lines[0]["BAC"] == pytest.approx(-6.80)
    text = table.to_text()
    assert text.splitlines()[0].split() == list(COLUMNS)
    assert "-6.80" in text and "27.39" in text


def test_infinite_psnr_left_out_of_average():
    table = build_report([_run("a", "x", mean_psnr=math.inf), _run("b", "x", mean_psnr=30.0)])
    assert table.average["PSNR"] == 30.0
    assert any("infinite PSNR" in n for n in table.notes)
    assert json.loads(table.to_jsonl().splitlines()[0])["PSNR"] == "inf"


def test_schema_conflicts_rejected():
    with pytest.raises(InconsistentSchema):
        build_report([])
    with pytest.raises(InconsistentSchema):
        build_report([_run(), _run()])
    with pytest.raises(InconsistentSchema):
        build_report([_run("a"), _run("b", max_pixel_value=255.0)])


def test_write_report_and_plots(tmp_path):
    paths = write_report(build_report([_run()]), tmp_path)
    assert sorted(paths) == ["csv", "jsonl", "txt"]
    assert all((tmp_path / f"report.{e}").stat().st_size > 0 for e in paths)
    p1 = plot_stealth([20.0, 25.0, 30.0], [0.9, 0.95, 0.99], tmp_path / "s.png", "stego")
    p2 = plot_curves({"BA": [50, 60], "ASR": [10, 90]}, tmp_path / "c.png")
    for p in (p1, p2):
        with open(p, "rb") as f:
            assert f.read(8) == b"\x89PNG\r\n\x1a\n"


pct = st.floats(0, 100, allow_nan=False)


@given(pct, pct)
def test_bac_identity_property(normal, backdoor):
    r = _run(ba_normal=normal, ba=backdoor)
    assert abs(r.bac - (backdoor - normal)) <= 1e-9
