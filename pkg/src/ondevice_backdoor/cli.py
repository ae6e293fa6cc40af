"""Command-line entry point.

    ondevice-backdoor <command> --config exp.yaml [--output DIR] [--seed N] [--verbose]

Commands run one pipeline stage each and write under ``<output>/<command>/``:

  prepare    synthetic datasets, a clean victim classifier and an app corpus
  scan       inventory of every app package in the corpus
  analyze    signature, task and label binding of every harvested model
  convert    trainable reconstruction of the selected model, with equivalence checks
  train-gen  steganographic trigger generator
  attack     poisoned fine-tuning, one run per trigger kind plus a zero-poison control
  evaluate   effectiveness and stealth metrics of the exported backdoored models
  report     comparison tables from the evaluation runs
  run        the configured stages in order (all of the above by default)

Exit status: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
Set BACKDOOR_DEVICE to choose the compute device (only "cpu" is built in).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import IMAGE_CLASSIFICATION, analyze
from .attack import (NOISE, PATCH, STEGO, BaselineTriggerSpec, PoisonConfig, patch_region,
                     poison_dataset, train_backdoor, trigger_function)
from .config import COMMANDS, ExperimentConfig, load_config
from .conversion import convert, export_deployable, verify_equivalence
from .data import SIGN_CLASSES, ImageSet, load_dataset, save_dataset, synthetic_signs
from .errors import BackdoorToolkitError, ConfigInvalid, MissingUpstreamArtifact
from .formats import VALID, sniff_format
from .inventory import FrameworkSignature, LabelFileRecord, ModelCandidate, scan_apk
from .inventory.fixtures import build_corpus
from .metrics import attack_success_rate, benign_accuracy, ms_ssim, psnr, stealth
from .report import AttackReport, build_report, plot_curves, plot_stealth, write_report
from .stego import TriggerGenerator, bit_accuracy, decode, encode, string_to_bits, train_generator
from .training import desk_cnn, fit

log = logging.getLogger("ondevice_backdoor")

DEVICE_ENV = "BACKDOOR_DEVICE"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
CONTROL = "control"
MODEL_FILE = "model.tflite"
CURVE_SAMPLES = 500  # test images scored after every attack epoch


# -- artifact helpers ---------------------------------------------------------

def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _read_json(path: Path):
    return json.loads(Path(path).read_text())


def _need(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise MissingUpstreamArtifact(f"{path} not found; run `{producer}` first")
    return Path(path)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(stage_dir: Path, command: str, cfg: ExperimentConfig) -> Path:
    """Reference every file of a stage to the producing config digest."""
    files = sorted(p for p in stage_dir.rglob("*") if p.is_file() and p.name != "MANIFEST.json")
    return _write_json(stage_dir / "MANIFEST.json", {
        "command": command, "config_digest": cfg.digest,
        "files": [{"path": str(p.relative_to(stage_dir)), "sha256": _sha256(p)} for p in files]})


def _fresh(directory: Path) -> Path:
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    return directory


def _load_trainable(path: Path):
    return convert(Path(path).read_bytes())


def _testset(cfg: ExperimentConfig) -> ImageSet:
    path = cfg.inputs.testset or _need(cfg.stage_dir("prepare") / "data" / "test", "prepare")
    return load_dataset(path)


def _substitute(cfg: ExperimentConfig) -> ImageSet:
    path = cfg.inputs.dataset or _need(cfg.stage_dir("prepare") / "data" / "substitute", "prepare")
    return load_dataset(path)


def _generator(cfg: ExperimentConfig) -> TriggerGenerator:
    path = cfg.inputs.generator or _need(cfg.stage_dir("train-gen") / "generator", "train-gen")
    return TriggerGenerator.load(path)


def _baseline(cfg: ExperimentConfig, kind: str, shape) -> BaselineTriggerSpec:
    b = cfg.baseline
    if kind == PATCH:
        return BaselineTriggerSpec.make_patch(b.patch_size, b.corner, b.fill_value)
    return BaselineTriggerSpec.make_noise(shape, b.noise_amplitude, b.seed, b.noise_cell)


def _trigger(cfg: ExperimentConfig, kind: str, shape, generator=None):
    """Batch trigger function plus the objects needed to rebuild it."""
    poison = cfg.poison.build(kind)
    if kind == STEGO:
        generator = generator or _generator(cfg)
        return trigger_function(poison, generator=generator), generator, None
    spec = _baseline(cfg, kind, shape)
    return trigger_function(poison, baseline=spec), generator, spec


# -- commands -----------------------------------------------------------------

def cmd_prepare(cfg: ExperimentConfig) -> dict:
    """Desk-scale stand-ins for the developer's data, the attacker's data and the market."""
    out = _fresh(cfg.stage_dir("prepare"))
    p, s = cfg.prepare, cfg.seed
    size = p.image_size
    sets = {"train": synthetic_signs(p.train_size, s + 1, size, p.num_classes),
            "substitute": synthetic_signs(p.substitute_size, s + 2, size, p.num_classes),
            "test": synthetic_signs(p.test_size, s + 3, size, p.num_classes)}
    for name, data in sets.items():
        save_dataset(out / "data" / name, data)
        log.info("wrote %d %s images", len(data), name)

    victim = desk_cnn(p.num_classes, size, 3, seed=s)
    history = fit(victim, sets["train"].images, sets["train"].labels, cfg.victim_training.build())
    model_bytes = export_deployable(victim, f"config_digest={cfg.digest}")
    (out / "victim.tflite").write_bytes(model_bytes)
    labels = list(SIGN_CLASSES[:p.num_classes])
    (out / "labels.txt").write_text("\n".join(labels) + "\n")
    truth = build_corpus(out / "corpus", model_bytes, labels, p.n_dl_packages, p.n_plain_packages)
    summary = {"victim_parameters": victim.parameter_count(),
               "victim_test_accuracy": benign_accuracy(victim, sets["test"].images, sets["test"].labels),
               "victim_history": history, "packages": truth,
               "sizes": {k: len(v) for k, v in sets.items()}, "config_digest": cfg.digest}
    _write_json(out / "corpus" / "truth.json", {"is_dl_app": truth, "config_digest": cfg.digest})
    _write_json(out / "prepare.json", summary)
    return summary


def cmd_scan(cfg: ExperimentConfig) -> dict:
    corpus = cfg.inputs.corpus or _need(cfg.stage_dir("prepare") / "corpus", "prepare")
    packages = sorted(Path(corpus).glob("*.apk"))
    if not packages:
        raise MissingUpstreamArtifact(f"no .apk packages under {corpus}")
    out = _fresh(cfg.stage_dir("scan"))
    sigs = [FrameworkSignature(k, tuple(v.encode() for v in ids)) for k, ids in cfg.scan.signatures.items()]
    lines, n_dl, n_models = [], 0, 0
    for pkg in packages:
        try:
            rec = scan_apk(pkg, sigs, cfg.scan.mode, cfg.scan.label_keywords, cfg.scan.model_suffixes)
        except BackdoorToolkitError as exc:
            log.warning("%s: %s", pkg.name, exc)
            lines.append({"package_id": pkg.stem, "error": f"{type(exc).__name__}: {exc}",
                          "config_digest": cfg.digest})
            continue
        d = rec.to_dict(include_timestamp=False)
        d["package_file"] = pkg.name
        d["config_digest"] = cfg.digest
        lines.append(d)
        n_dl += rec.is_dl_app
        # keep a copy of every valid model for the analysis stage
        with zipfile.ZipFile(pkg) as zf:
            for c in rec.model_candidates:
                if c.validation == VALID:
                    dest = out / "extracted" / rec.package_id / c.archive_path.replace("/", "__")
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    dest.write_bytes(zf.read(c.archive_path))
                    n_models += 1
    (out / "inventory.jsonl").write_text("".join(json.dumps(l, sort_keys=True) + "\n" for l in lines))
    summary = {"packages": len(packages), "dl_apps": n_dl, "valid_models": n_models,
               "config_digest": cfg.digest}
    _write_json(out / "scan.json", summary)
    return summary


def _inventory(cfg: ExperimentConfig) -> list[dict]:
    path = _need(cfg.stage_dir("scan") / "inventory.jsonl", "scan")
    return [json.loads(l) for l in path.read_text().splitlines() if l.strip()]


def cmd_analyze(cfg: ExperimentConfig) -> dict:
    records = _inventory(cfg)
    scan_dir = cfg.stage_dir("scan")
    out = _fresh(cfg.stage_dir("analyze"))
    rows, selected = [], None
    for rec in records:
        if "error" in rec:
            continue
        labels = [LabelFileRecord(r["archive_path"], r["labels"], r["duplicates"], r["error"])
                  for r in rec["label_files"]]
        for c in rec["model_candidates"]:
            if c["validation"] != VALID:
                continue
            path = scan_dir / "extracted" / rec["package_id"] / c["archive_path"].replace("/", "__")
            data = _need(path, "scan").read_bytes()
            info = analyze(data, c["format_hint"], labels, source=ModelCandidate(**c))
            row = {"package_id": rec["package_id"], "archive_path": c["archive_path"],
                   "sha256": c["sha256"], "extracted": str(path.relative_to(scan_dir)),
                   "format": sniff_format(data), **info.to_dict(), "config_digest": cfg.digest}
            rows.append(row)
            if selected is None and info.task == IMAGE_CLASSIFICATION and info.labels:
                selected = row
    (out / "models.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    if selected is not None:
        _write_json(out / "selected.json", selected)
    return {"models": len(rows), "selected": None if selected is None else
            f"{selected['package_id']}:{selected['archive_path']}", "config_digest": cfg.digest}


def cmd_convert(cfg: ExperimentConfig) -> dict:
    if cfg.inputs.model is not None:
        data = Path(cfg.inputs.model).read_bytes()
        labels = (Path(cfg.inputs.labels).read_text().split() if cfg.inputs.labels else None)
        origin = str(cfg.inputs.model)
    else:
        sel = _read_json(_need(cfg.stage_dir("analyze") / "selected.json", "analyze"))
        data = _need(cfg.stage_dir("scan") / sel["extracted"], "scan").read_bytes()
        labels, origin = sel["labels"], f"{sel['package_id']}:{sel['archive_path']}"
    out = _fresh(cfg.stage_dir("convert"))
    c = cfg.conversion
    model = convert(data)
    check = verify_equivalence(data, model, c.n_samples, c.tolerance, cfg.seed, tuple(c.input_range))
    exported = export_deployable(model, f"config_digest={cfg.digest}")
    roundtrip = verify_equivalence(exported, model, c.n_samples, c.tolerance, cfg.seed, tuple(c.input_range))
    (out / MODEL_FILE).write_bytes(exported)
    if labels:
        (out / "labels.txt").write_text("\n".join(labels) + "\n")
    summary = {"origin": origin, "source_format": model.source_format,
               "parameters": model.parameter_count(), "layers": [l.name for l in model.layers],
               "equivalence": check.to_dict(), "export_roundtrip": roundtrip.to_dict(),
               "config_digest": cfg.digest}
    _write_json(out / "equivalence.json", summary)
    if not (check.passed and roundtrip.passed):
        raise BackdoorToolkitError(f"equivalence check failed: reconstruct max diff {check.max_abs_diff:.3g}, "
                                   f"export max diff {roundtrip.max_abs_diff:.3g}")
    return summary


def cmd_train_gen(cfg: ExperimentConfig) -> dict:
    data = _substitute(cfg)
    test = _testset(cfg)
    out = _fresh(cfg.stage_dir("train-gen"))
    gcfg = cfg.generator.build(data.images.shape[1:])
    t0 = time.time()
    gen = train_generator(data.images, gcfg)
    gen.save(out / "generator")
    secret = string_to_bits(cfg.poison.target_string, gcfg.message_length)
    n = min(len(test), 1000)
    x = test.images[:n]
    enc = encode(gen, x, secret).poisoned_image
    # 8-bit rounding: what a stored image would carry
    enc8 = np.round(enc * 255.0) / 255.0
    bits, _ = decode(gen, enc8)
    null_bits, _ = decode(gen, x)
    rng = np.random.default_rng(cfg.seed)
    random_msgs = rng.integers(0, 2, (n, gcfg.message_length))
    summary = {"fingerprint": gen.fingerprint(), "train_seconds": time.time() - t0,
               "heldout_bit_accuracy": 100.0 * bit_accuracy(bits, secret),
               "null_bit_accuracy": 100.0 * bit_accuracy(null_bits, secret),
               "null_bit_accuracy_random_messages": 100.0 * float(np.mean(null_bits == random_msgs)),
               "heldout_images": n, "history": gen.history, "config": gcfg.to_dict(),
               "config_digest": cfg.digest}
    _write_json(out / "generator.json", summary)
    return summary


def _curve_callback(test: ImageSet, trigger, target: int):
    x, y = test.images[:CURVE_SAMPLES], test.labels[:CURVE_SAMPLES]

    def callback(epoch, model):
        return {"BA": benign_accuracy(model, x, y), "ASR": attack_success_rate(model, x, y, trigger, target)}
    return callback


def cmd_attack(cfg: ExperimentConfig) -> dict:
    model_path = _need(cfg.stage_dir("convert") / MODEL_FILE, "convert")
    if STEGO in cfg.attacks:
        _need(cfg.inputs.generator or cfg.stage_dir("train-gen") / "generator", "train-gen")
    victim = _load_trainable(model_path)
    data, test = _substitute(cfg), _testset(cfg)
    out = _fresh(cfg.stage_dir("attack"))
    schedule = cfg.training.build()
    target = cfg.poison.target_label
    shape = data.images.shape[1:]
    summary = {"config_digest": cfg.digest, "runs": {}}
    generator = None
    for kind in cfg.attacks:
        trigger, generator, spec = _trigger(cfg, kind, shape, generator)
        poisoned = poison_dataset(data, cfg.poison.build(kind), generator, spec)
        d = out / kind
        poisoned.save(d, cfg.digest)
        if spec is not None and spec.kind == NOISE:
            np.save(d / "noise.npy", spec.noise)
        log.info("attack %s: %d poisoned of %d", kind, len(poisoned.poisoned_index), len(poisoned))
        bd = train_backdoor(victim, poisoned, schedule, _curve_callback(test, trigger, target))
        run = {"kind": kind, "provenance": bd.provenance, "history": bd.history,
               "n_poisoned": int(len(poisoned.poisoned_index)), "n_train": len(poisoned),
               "pre_export": {"BA": benign_accuracy(bd.model, test.images, test.labels),
                              "ASR": attack_success_rate(bd.model, test.images, test.labels, trigger, target)},
               "config_digest": cfg.digest}
        (d / MODEL_FILE).write_bytes(export_deployable(bd.model, f"config_digest={cfg.digest}"))
        _write_json(d / "run.json", run)
        summary["runs"][kind] = run["pre_export"]
    # zero-poison control: same schedule on the clean substitute data
    control = victim.clone()
    d = out / CONTROL
    d.mkdir()
    history = fit(control, data.images, data.labels, schedule)
    (d / MODEL_FILE).write_bytes(export_deployable(control, f"config_digest={cfg.digest}"))
    _write_json(d / "run.json", {"kind": CONTROL, "history": history, "schedule": schedule.to_dict(),
                                 "config_digest": cfg.digest})
    return summary


def _specificity(test: ImageSet, generator: TriggerGenerator | None, cfg: ExperimentConfig) -> dict:
    """Stego residuals should differ per image; the patch region should not."""
    n = min(cfg.evaluate.n_specificity_pairs, len(test))
    x = test.images[:n]
    out = {"n": n}
    if generator is not None:
        secret = string_to_bits(cfg.poison.target_string, generator.config.message_length)
        res = encode(generator, x, secret).residual
        out["distinct_residuals"] = len({r.tobytes() for r in res})
        out["distinct_fraction"] = 100.0 * out["distinct_residuals"] / n
    spec = _baseline(cfg, PATCH, x.shape[1:])
    rows, cols = patch_region(x.shape, spec)
    triggered = trigger_function(PoisonConfig(trigger_kind=PATCH), baseline=spec)(x)
    regions = triggered[:, rows, cols, :]
    out["identical_patch_fraction"] = 100.0 * float(np.mean(np.all(regions == regions[:1], axis=(1, 2, 3))))
    return out


def cmd_evaluate(cfg: ExperimentConfig) -> dict:
    normal_path = _need(cfg.stage_dir("convert") / MODEL_FILE, "convert")
    attack_dir = _need(cfg.stage_dir("attack"), "attack")
    test = _testset(cfg)
    out = _fresh(cfg.stage_dir("evaluate"))
    mcfg = cfg.metrics.build()
    target = cfg.poison.target_label
    shape = test.images.shape[1:]
    normal = _load_trainable(normal_path)
    ba_normal = benign_accuracy(normal, test.images, test.labels)
    pool = np.flatnonzero(test.labels != target)
    pairs = test.images[pool[:cfg.evaluate.n_stealth_pairs]]

    runs, checks, generator = [], {"clean_model_asr": {}, "control_asr": {}, "neutrality": {}}, None
    control_path = attack_dir / CONTROL / MODEL_FILE
    control = _load_trainable(control_path) if control_path.exists() else None
    for kind in cfg.attacks:
        run = _read_json(_need(attack_dir / kind / "run.json", "attack"))
        model = _load_trainable(_need(attack_dir / kind / MODEL_FILE, "attack"))
        trigger, generator, _ = _trigger(cfg, kind, shape, generator)
        if kind == STEGO and generator.fingerprint() != run["provenance"]["trigger"].get("generator"):
            raise MissingUpstreamArtifact("generator differs from the one used by `attack`; re-run attack")
        ba = benign_accuracy(model, test.images, test.labels)
        asr = attack_success_rate(model, test.images, test.labels, trigger, target)
        triggered = trigger(pairs)
        st = stealth(pairs, triggered, mcfg)
        report = AttackReport(
            model_id="desk-cnn", attack=kind, ba_normal=ba_normal, ba_backdoor=ba, asr=asr,
            mean_psnr=st.mean_psnr, min_psnr=st.min_psnr, mean_ms_ssim=st.mean_ms_ssim,
            min_ms_ssim=st.min_ms_ssim, n_test=len(test), n_pool=len(pool), n_pairs=st.pairs,
            max_pixel_value=mcfg.max_pixel_value, ms_ssim_scales=mcfg.scales, config_digest=cfg.digest,
            notes=[f"{st.infinite_psnr} identical pairs left out of the PSNR mean"] if st.infinite_psnr else [])
        runs.append(report)
        pre = run["pre_export"]
        checks["neutrality"][kind] = {"pre_export": pre, "post_export": {"BA": ba, "ASR": asr},
                                      "delta_BA": ba - pre["BA"], "delta_ASR": asr - pre["ASR"]}
        checks["clean_model_asr"][kind] = attack_success_rate(normal, test.images, test.labels, trigger, target)
        if kind == STEGO:
            wrong = replace(cfg.poison.build(kind), target_string=cfg.evaluate.wrong_secret)
            checks["wrong_secret_asr"] = attack_success_rate(
                model, test.images, test.labels, trigger_function(wrong, generator=generator), target)
        if control is not None:
            checks["control_asr"][kind] = attack_success_rate(control, test.images, test.labels, trigger, target)
        curves = {k: [h[k] for h in run["history"]] for k in ("ASR", "BA") if k in run["history"][0]}
        if curves:
            plot_curves(curves, out / f"curves_{kind}.png")
        plot_stealth([psnr(a, b, mcfg.max_pixel_value) for a, b in zip(pairs, triggered)],
                     [ms_ssim(a, b, mcfg) for a, b in zip(pairs, triggered)],
                     out / f"stealth_{kind}.png", f"{kind} trigger")
    if control is not None:
        checks["control_ba"] = benign_accuracy(control, test.images, test.labels)
    checks["ba_normal"] = ba_normal
    checks["num_classes"] = test.num_classes
    checks["specificity"] = _specificity(test, generator if STEGO in cfg.attacks else None, cfg)
    checks["config_digest"] = cfg.digest
    (out / "runs.jsonl").write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in runs))
    _write_json(out / "checks.json", checks)
    return {"runs": [r.row() for r in runs], "checks": checks}


def cmd_report(cfg: ExperimentConfig) -> dict:
    path = _need(cfg.stage_dir("evaluate") / "runs.jsonl", "evaluate")
    runs = [json.loads(l) for l in path.read_text().splitlines() if l.strip()]
    out = _fresh(cfg.stage_dir("report"))
    table = build_report(runs)
    table.notes.append(f"config digest {cfg.digest}")
    paths = write_report(table, out, "report")
    print(table.to_text())
    return {"paths": paths, "config_digest": cfg.digest}


HANDLERS = {"prepare": cmd_prepare, "scan": cmd_scan, "analyze": cmd_analyze, "convert": cmd_convert,
            "train-gen": cmd_train_gen, "attack": cmd_attack, "evaluate": cmd_evaluate,
            "report": cmd_report}


def execute_command(command: str, cfg: ExperimentConfig) -> dict:
    """Run one stage and stamp its directory with the config digest."""
    if command == "run":
        return {stage: execute_command(stage, cfg) for stage in cfg.stages}
    if command not in HANDLERS:
        raise ConfigInvalid(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    log.info("%s: config digest %s", command, cfg.digest[:12])
    t0 = time.time()
    result = HANDLERS[command](cfg)
    write_manifest(cfg.stage_dir(command), command, cfg)
    log.info("%s finished in %.1f s", command, time.time() - t0)
    return result


# -- argument handling --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ondevice-backdoor", description=__doc__.split("\n\n")[0],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=COMMANDS + ("run",))
    p.add_argument("--config", help="YAML or JSON experiment configuration")
    p.add_argument("--output", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="experiment seed (overrides seed)")
    p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _check_device() -> None:
    device = os.environ.get(DEVICE_ENV, "cpu").strip().lower()
    if device != "cpu":
        raise ConfigInvalid(f"{DEVICE_ENV}={device!r}: only 'cpu' is supported")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _check_device()
        output = None if args.output is None else str(Path(args.output).resolve())
        cfg = load_config(args.config, {"output_dir": output, "seed": args.seed})
    except ConfigInvalid as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = execute_command(args.command, cfg)
    except ConfigInvalid as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_INVALID
    except MissingUpstreamArtifact as exc:
        print(f"missing upstream artifact: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        log.debug("failure", exc_info=True)
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.verbose:
        print(json.dumps(result, indent=2, sort_keys=True, default=str)[:4000], file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
