"""Attack result tables: JSON lines and CSV for machines, aligned text for
people, plus histogram and training-curve plots."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import InconsistentSchema

# fixed machine-report column order
COLUMNS = ("model", "attack", "BA_normal", "BA", "ASR", "BAC", "PSNR", "MS-SSIM")
META_COLUMNS = ("min_PSNR", "min_MS-SSIM", "n_test", "n_pool", "n_pairs", "max_pixel_value",
                "ms_ssim_scales", "config_digest")
AVERAGE = "Average"


@dataclass
class AttackReport:
    model_id: str
    attack: str
    ba_normal: float
    ba_backdoor: float
    asr: float | None
    bac: float = field(default=math.nan)
    mean_psnr: float | None = None
    min_psnr: float | None = None
    mean_ms_ssim: float | None = None
    min_ms_ssim: float | None = None
    n_test: int = 0
    n_pool: int = 0
    n_pairs: int = 0
    max_pixel_value: float = 1.0
    ms_ssim_scales: int | None = None
    config_digest: str = ""
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if math.isnan(self.bac):
            self.bac = self.ba_backdoor - self.ba_normal
        self.check()

    def check(self) -> None:
        if abs(self.bac - (self.ba_backdoor - self.ba_normal)) > 1e-9:
            raise InconsistentSchema(f"{self.model_id}/{self.attack}: BAC != BA_backdoor - BA_normal")
        for name in ("ba_normal", "ba_backdoor", "asr"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise InconsistentSchema(f"{name}={v} outside [0, 100]")
        for name in ("mean_ms_ssim", "min_ms_ssim"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InconsistentSchema(f"{name}={v} outside [0, 1]")
        if not self.config_digest:
            raise InconsistentSchema(f"{self.model_id}/{self.attack}: missing config digest")

    def row(self) -> dict:
        return {"model": self.model_id, "attack": self.attack, "BA_normal": self.ba_normal,
                "BA": self.ba_backdoor, "ASR": self.asr, "BAC": self.bac, "PSNR": self.mean_psnr,
                "MS-SSIM": self.mean_ms_ssim, "min_PSNR": self.min_psnr,
                "min_MS-SSIM": self.min_ms_ssim, "n_test": self.n_test, "n_pool": self.n_pool,
                "n_pairs": self.n_pairs, "max_pixel_value": self.max_pixel_value,
                "ms_ssim_scales": self.ms_ssim_scales, "config_digest": self.config_digest}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackReport":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InconsistentSchema(f"unknown report fields: {sorted(unknown)}")
        return cls(**d)


def _mean(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isinf(v))]
    return sum(vals) / len(vals) if vals else None


@dataclass
class ReportTable:
    rows: list[dict]
    average: dict
    notes: list[str] = field(default_factory=list)

    def all_rows(self) -> list[dict]:
        return self.rows + [self.average]

    def to_jsonl(self) -> str:
        out = []
        for r in self.all_rows():
            out.append(json.dumps({k: _json_value(r.get(k)) for k in COLUMNS + META_COLUMNS}))
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS + META_COLUMNS)
        for r in self.all_rows():
            w.writerow(["" if r.get(k) is None else _json_value(r.get(k)) for k in COLUMNS + META_COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned columns; BA/ASR/BAC in percent, PSNR in dB."""
        header = list(COLUMNS)
        body = [[_fmt(r.get(k)) for k in COLUMNS] for r in self.all_rows()]
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
                 "  ".join("-" * w for w in widths)]
        for i, row in enumerate(body):
            if i == len(body) - 1:
                lines.append("  ".join("-" * w for w in widths))
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        return "\n".join(lines + [f"note: {n}" for n in self.notes]) + "\n"

    def pivot(self, metric: str = "ASR") -> str:
        """Model-by-attack layout with a closing average row."""
        attacks = sorted({r["attack"] for r in self.rows})
        models = list(dict.fromkeys(r["model"] for r in self.rows))
        cell = {(r["model"], r["attack"]): r.get(metric) for r in self.rows}
        header = ["model"] + attacks
        body = [[m] + [_fmt(cell.get((m, a))) for a in attacks] for m in models]
        body.append([AVERAGE] + [_fmt(_mean(cell.get((m, a)) for m in models)) for a in attacks])
        widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
        lines = [f"{metric}", "  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
        return "\n".join(lines) + "\n"


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _fmt(v, digits: int = 2) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.{digits}f}"
    return str(v)


def build_report(runs) -> ReportTable:
    """One row per (model, attack) run plus an average row over all runs."""
    reports = [r if isinstance(r, AttackReport) else AttackReport.from_dict(dict(r)) for r in runs]
    if not reports:
        raise InconsistentSchema("no runs to report")
    keys = {(r.model_id, r.attack) for r in reports}
    if len(keys) != len(reports):
        raise InconsistentSchema("duplicate (model, attack) rows")
    scales = {r.ms_ssim_scales for r in reports if r.mean_ms_ssim is not None}
    maxes = {r.max_pixel_value for r in reports}
    if len(maxes) > 1:
        raise InconsistentSchema(f"runs mix pixel ranges {sorted(maxes)}")
    rows = [r.row() for r in reports]
    average = {"model": AVERAGE, "attack": ""}
    for k in COLUMNS[2:] + ("min_PSNR", "min_MS-SSIM", "n_test", "n_pool", "n_pairs"):
        average[k] = _mean(row[k] for row in rows)
    average["max_pixel_value"] = next(iter(maxes))
    average["config_digest"] = ",".join(sorted({r.config_digest for r in reports}))
    notes = ["ASR pool excludes samples whose true class is the target class",
             f"PSNR/MS-SSIM computed with MAX={next(iter(maxes))}"]
    if scales:
        notes.append("MS-SSIM scales: " + ", ".join(str(s) for s in sorted(scales)))
    inf_rows = [f"{r.model_id}/{r.attack}" for r in reports
                if r.mean_psnr is not None and math.isinf(r.mean_psnr)]
    if inf_rows:
        notes.append("infinite PSNR left out of the average: " + ", ".join(inf_rows))
    return ReportTable(rows, average, notes)


def write_report(table: ReportTable, out_dir, stem: str = "report") -> dict[str, str]:
    """Write .jsonl, .csv and .txt renderings; returns the paths written."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for ext, text in (("jsonl", table.to_jsonl()), ("csv", table.to_csv()),
                      ("txt", table.to_text() + "\n" + table.pivot("BA") + "\n" + table.pivot("ASR"))):
        p = out / f"{stem}.{ext}"
        p.write_text(text)
        paths[ext] = str(p)
    return paths


def plot_stealth(psnrs, ms_ssims, path, title: str = "") -> str:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].hist([p for p in psnrs if not math.isinf(p)], bins=30, color="tab:blue")
    axes[0].set_xlabel("PSNR (dB)")
    axes[1].hist(list(ms_ssims), bins=30, color="tab:green")
    axes[1].set_xlabel("MS-SSIM")
    for ax in axes:
        ax.set_ylabel("pairs")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return str(path)


def plot_curves(history: dict[str, list[float]], path, ylabel: str = "%") -> str:
    """One line per named series (e.g. per-epoch ASR and BA)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, values in history.items():
        ax.plot(range(1, len(values) + 1), values, marker="o", label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return str(path)
