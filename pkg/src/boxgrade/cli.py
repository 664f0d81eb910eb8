"""Command-line entry point: ``boxgrade <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import Opt, UsageError, resolve, run_config

logger = logging.getLogger("boxgrade")

COMMON = [
    Opt("seed", int, 0, "seed for every randomized stage"),
    Opt("workers", int, 1, "worker processes for per-image work"),
    Opt("log_level", str, "WARNING", "logging level"),
]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "synthesize": ("filter small boxes and synthesize good/bad/background samples", [
        Opt("annotations", str, None, "COCO JSON or dataset manifest", required=True),
        Opt("out", str, None, "sample manifest (JSONL) to write", required=True),
        Opt("dataset_out", str, None, "also write the filtered dataset manifest here"),
        Opt("bad_iou_min", float, 0.5), Opt("bad_iou_max", float, 0.8),
        Opt("background_iou_max", float, 0.2),
        Opt("max_attempts", int, 50, "rejection-sampling budget per box"),
        Opt("background_per_image", int, 1),
        Opt("min_side", float, 20.0, "drop boxes with both sides below this"),
    ]),
    "train": ("fine-tune an encoder pair on a sample manifest", [
        Opt("manifest", str, None, "training sample manifest", required=True),
        Opt("image_root", str, ".", "directory image paths are relative to"),
        Opt("eval_manifest", str, None, "held-out manifest for per-epoch accuracy"),
        Opt("out", str, None, "checkpoint path", required=True),
        Opt("log", str, None, "training log JSONL (default: <out>.log.jsonl)"),
        Opt("preset", str, "full", "hyperparameter preset", choices=("full", "desk")),
        Opt("encoder", str, "toy", choices=("toy", "clip")),
        Opt("clip_model", str, "openai/clip-vit-large-patch14-336"),
        Opt("template_set", str, "simple", choices=("simple", "elaborate")),
        Opt("resolution", int, 64, "toy encoder input resolution"),
        Opt("lr", float, 5e-5), Opt("beta1", float, 0.9), Opt("beta2", float, 0.98),
        Opt("dropout", float, 0.25),
        Opt("micro_batch", int, 96), Opt("effective_batch", int, 2496),
        Opt("epochs", int, 15), Opt("steps", int, None, "optimizer steps (overrides --epochs)"),
        Opt("eval_every", int, 0),
        Opt("trainable_parts", str, "full", choices=("vision_only", "text_only", "full")),
        Opt("freeze_logit_scale", bool, False, flag=True),
        Opt("reduction", str, "target_ce", choices=("target_ce", "pooled")),
    ]),
    "evaluate": ("grade an evaluation manifest and compute metrics", [
        Opt("checkpoint", str, None, required=True),
        Opt("manifest", str, None, required=True),
        Opt("image_root", str, "."),
        Opt("threshold", float, 0.5),
        Opt("out", str, None, "metrics JSON", required=True),
        Opt("records", str, None, "per-sample records JSONL (default: <out>.records.jsonl)"),
        Opt("crop_dump", str, None, "directory for rendered crops"),
    ]),
    "sweep": ("recall / false-acceptance trade-off over thresholds", [
        Opt("records", str, None, required=True),
        Opt("grid_size", int, 21, "evenly spaced thresholds in [0, 1]"),
        Opt("out", str, None, "curve CSV", required=True),
        Opt("figure", str, None, "optional PNG of the curve"),
    ]),
    "grade": ("grade one box in one image", [
        Opt("checkpoint", str, None, required=True),
        Opt("image", str, None, required=True),
        Opt("box", str, None, "x,y,w,h in pixels", required=True),
        Opt("class_id", int, None, "claimed category id (enables accept/reject)"),
        Opt("threshold", float, 0.5),
        Opt("top_k", int, 3),
    ]),
    "gate": ("screen detector pseudo-labels", [
        Opt("checkpoint", str, None, required=True),
        Opt("threshold", float, 0.5),
        Opt("in_path", str, None, "pseudo-label JSONL", required=True),
        Opt("out", str, None, "retained pseudo-labels JSONL", required=True),
        Opt("stats", str, None, "gate statistics JSON (default: <out>.stats.json)"),
        Opt("image_root", str, "."),
    ]),
    "report": ("metrics, sweep, disagreements and figures from evaluation records", [
        Opt("records", str, None, required=True),
        Opt("out_dir", str, None, required=True),
        Opt("train_log", str, None),
        Opt("threshold", float, 0.5),
        Opt("grid_size", int, 21),
        Opt("k", int, 20, "disagreements to list"),
    ]),
    "toy-corpus": ("draw the procedural desk-scale corpus", [
        Opt("out", str, None, required=True),
        Opt("classes", int, 8), Opt("images_per_class", int, 200), Opt("image_size", int, 192),
    ]),
    "validate": ("re-check a sample manifest against its annotations", [
        Opt("manifest", str, None, required=True),
        Opt("annotations", str, None, required=True),
    ]),
}

DESK_PRESET = {"lr": 3e-3, "dropout": 0.0, "micro_batch": 128, "effective_batch": 128,
               "steps": 200, "eval_every": 25}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxgrade", description=__doc__)
    parser.add_argument("--config", help="INI file with [global] and per-command sections")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for opt in opts + COMMON:
            dest_flag = "--in" if opt.name == "in_path" else opt.cli
            extra = {"help": f"{opt.help} (default: {opt.default})".strip()}
            if opt.flag:
                p.add_argument(dest_flag, dest=opt.name, action="store_const", const=True, default=None, **extra)
            else:
                p.add_argument(dest_flag, dest=opt.name, default=None, metavar=opt.name.upper(), **extra)
    return parser


def _need(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _curve_csv(points, path, rc) -> None:
    from .metrics import write_curve_csv

    write_curve_csv(points, path)
    text = Path(path).read_text()
    Path(path).write_text(f"# run_config: {json.dumps(rc, sort_keys=True)}\n" + text)


def cmd_synthesize(o, rc):
    from .dataset import filter_small, load_dataset, write_dataset_manifest
    from .synthesis import SynthesisConfig, synthesize

    ds = load_dataset(_need(o["annotations"], "annotation file"))
    ds, stats = filter_small(ds, o["min_side"])
    cfg = SynthesisConfig(o["bad_iou_min"], o["bad_iou_max"], o["background_iou_max"],
                          o["max_attempts"], o["background_per_image"], o["seed"])
    manifest = synthesize(ds, cfg, workers=o["workers"])
    manifest.run_config = {**rc, "filter": stats}
    manifest.write(o["out"])
    if o["dataset_out"]:
        write_dataset_manifest(ds, o["dataset_out"], rc)
    print(f"{len(ds.images)} images, removed {stats['removed_annotations']}/{stats['total_annotations']} "
          f"small boxes ({stats['removed_fraction']:.1%}); samples {manifest.counts()}, "
          f"skips {len(manifest.notes)} -> {o['out']}")


def _train_config(o):
    from .grader.training import TrainConfig

    return TrainConfig(
        learning_rate=o["lr"], beta1=o["beta1"], beta2=o["beta2"], dropout=o["dropout"],
        micro_batch_size=o["micro_batch"], effective_batch_size=o["effective_batch"],
        epochs_max=o["epochs"], max_steps=o["steps"], trainable_parts=o["trainable_parts"],
        freeze_logit_scale=o["freeze_logit_scale"], reduction=o["reduction"],
        eval_every=o["eval_every"], seed=o["seed"],
    )


def cmd_train(o, rc):
    from .crops import CropSpec, ImageStore
    from .grader.encoders import ClipAdapter, ToyEncoderPair
    from .grader.training import TrainingDiverged, train
    from .prompts import build_prompts
    from .synthesis import SampleManifest

    manifest = SampleManifest.read(_need(o["manifest"], "manifest"))
    eval_samples = None
    if o["eval_manifest"]:
        eval_samples = SampleManifest.read(_need(o["eval_manifest"], "eval manifest")).samples
    bank = build_prompts(manifest.categories, o["template_set"])
    cfg = _train_config(o)
    if o["encoder"] == "toy":
        enc = ToyEncoderPair.for_prompts(bank.prompts, resolution=o["resolution"], dropout=cfg.dropout,
                                         freeze_logit_scale=cfg.freeze_logit_scale, seed=o["seed"])
    else:
        enc = ClipAdapter.from_pretrained(o["clip_model"], dropout=cfg.dropout,
                                          freeze_logit_scale=cfg.freeze_logit_scale)
    spec = CropSpec(output_resolution=enc.resolution)
    store = ImageStore(_need(o["image_root"], "image root"))
    meta = {"synthesis_config": asdict(manifest.config), "run_config": rc}
    log_path = o["log"] or str(o["out"]) + ".log.jsonl"
    try:
        result = train(manifest.samples, bank, enc, cfg, store, spec, categories=manifest.categories,
                       eval_samples=eval_samples, checkpoint_meta=meta)
    except TrainingDiverged as exc:
        exc.checkpoint.save(o["out"])
        print(f"training diverged ({exc}); last good checkpoint written to {o['out']}", file=sys.stderr)
        return 1
    result.checkpoint.save(o["out"])
    result.write_log(log_path)
    last = result.log[-1] if result.log else {}
    print(f"trained {len(result.log)} steps; final loss {last.get('loss_total', float('nan')):.4f}"
          + (f", eval accuracy {last['eval_accuracy']:.4f}" if "eval_accuracy" in last else "")
          + f" -> {o['out']}")
    return 0


def _grader(path):
    from .grader.checkpoint import Checkpoint
    from .grader.inference import Grader

    return Grader.from_checkpoint(Checkpoint.load(_need(path, "checkpoint")))


def cmd_evaluate(o, rc):
    from .crops import ImageStore
    from .metrics import evaluate, write_records
    from .synthesis import SampleManifest

    grader = _grader(o["checkpoint"])
    manifest = SampleManifest.read(_need(o["manifest"], "manifest"))
    store = ImageStore(_need(o["image_root"], "image root"))
    report, records = evaluate(manifest.samples, grader, store, o["threshold"], o["crop_dump"])
    _dump_json({**report.to_json(), "run_config": rc}, o["out"])
    write_records(records, grader.bank, o["records"] or str(o["out"]) + ".records.jsonl", rc)
    print(f"accuracy {report.overall_accuracy:.4f}, mean recall of good {report.mean_recall_good:.4f}, "
          f"mean false acceptance of bad {report.mean_false_accept_bad:.4f} -> {o['out']}")


def cmd_sweep(o, rc):
    from .metrics import curve_area, read_records, sweep_thresholds, threshold_grid

    records, bank, _ = read_records(_need(o["records"], "records file"))
    points = sweep_thresholds(records, threshold_grid(o["grid_size"]), bank)
    _curve_csv(points, o["out"], rc)
    if o["figure"]:
        from .plotting import plot_tradeoff

        plot_tradeoff({"model": points}, o["figure"], run_config=rc)
    print(f"{len(points)} thresholds, area {curve_area(points):.4f} -> {o['out']}")


def cmd_grade(o, rc):
    from .crops import load_image, plan_crop, render
    from .grader.inference import decide

    grader = _grader(o["checkpoint"])
    pixels = load_image(_need(o["image"], "image"))
    try:
        box = tuple(float(v) for v in o["box"].split(","))
        if len(box) != 4:
            raise ValueError
    except ValueError:
        raise UsageError("--box must be x,y,w,h") from None
    spec = grader.inference_spec
    window = plan_crop(box, (pixels.shape[1], pixels.shape[0]), spec)
    result = grader.grade(render(pixels, box, window, spec))
    out = {"predicted_index": result.predicted_index,
           "top_k": [{"index": i, "prompt": grader.bank.prompts[i], "probability": p}
                     for i, p in result.top_k(o["top_k"])]}
    if o["class_id"] is not None:
        d = decide(result, grader.categories.dense(o["class_id"]), o["threshold"], grader.bank)
        out["decision"] = {"accepted": d.accepted, "reason": d.reason, "probability": d.probability}
    print(json.dumps(out, indent=2))


def cmd_gate(o, rc):
    from .crops import ImageStore
    from .gate import gate_batch, read_pseudo_labels, write_pseudo_labels

    grader = _grader(o["checkpoint"])
    labels = read_pseudo_labels(_need(o["in_path"], "pseudo-label file"))
    store = ImageStore(_need(o["image_root"], "image root"))
    retained, stats, _ = gate_batch(labels, grader, store, o["threshold"])
    write_pseudo_labels(retained, o["out"])
    _dump_json({**stats.to_json(), "run_config": rc}, o["stats"] or str(o["out"]) + ".stats.json")
    print(f"retained {stats.retained}/{stats.total} (filtered {stats.filtered_fraction:.1%}) -> {o['out']}")


def cmd_report(o, rc):
    from .metrics import (compute_metrics, curve_area, disagreement_report, read_records,
                          sweep_thresholds, threshold_grid, write_jsonl)
    from .plotting import plot_per_class, plot_tradeoff, plot_training

    records, bank, header = read_records(_need(o["records"], "records file"))
    out = Path(o["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    report = compute_metrics(records, bank, o["threshold"])
    points = sweep_thresholds(records, threshold_grid(o["grid_size"]), bank)
    area = curve_area(points)
    _dump_json({**report.to_json(), "curve_area": area, "run_config": rc,
                "source_run_config": header.get("run_config", {})}, out / "metrics.json")
    _curve_csv(points, out / "sweep.csv", rc)
    write_jsonl(disagreement_report(records, bank, o["k"]), out / "disagreements.jsonl")
    figures = [plot_tradeoff({"model": points}, out / "tradeoff.png", run_config=rc),
               plot_per_class(report, out / "per_class.png", run_config=rc)]
    if o["train_log"]:
        with open(_need(o["train_log"], "training log")) as fh:
            log = [json.loads(ln) for ln in fh if ln.strip()]
        if log:
            figures.append(plot_training(log, out / "training.png", run_config=rc))
    print(f"accuracy {report.overall_accuracy:.4f}, curve area {area:.4f}; "
          f"wrote metrics.json, sweep.csv, disagreements.jsonl and {len(figures)} figures to {out}")


def cmd_toy_corpus(o, rc):
    from .toy import make_toy_corpus

    paths = make_toy_corpus(o["out"], n_classes=o["classes"], images_per_class=o["images_per_class"],
                            image_size=o["image_size"], seed=o["seed"])
    print(json.dumps(paths, indent=2))


def cmd_validate(o, rc):
    from .dataset import filter_small, load_dataset
    from .synthesis import SampleManifest, validate_manifest

    manifest = SampleManifest.read(_need(o["manifest"], "manifest"))
    ds = load_dataset(_need(o["annotations"], "annotation file"))
    problems = validate_manifest(manifest, filter_small(ds)[0])
    for p in problems:
        print(p)
    print(f"{len(manifest.samples)} samples checked, {len(problems)} violations")
    return 1 if problems else 0


HANDLERS = {
    "synthesize": cmd_synthesize, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep,
    "grade": cmd_grade, "gate": cmd_gate, "report": cmd_report, "toy-corpus": cmd_toy_corpus,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    opts = COMMANDS[command][1] + COMMON
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        presets = None
        if command == "train":
            preset = resolve(command, [o for o in opts if o.name == "preset"], flags, args.config)["preset"]
            presets = DESK_PRESET if preset == "desk" else None
        values = resolve(command, opts, flags, args.config, presets)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"boxgrade: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(values["log_level"]).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    rc = run_config(command, values)
    try:
        status = HANDLERS[command](values, rc)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"boxgrade: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError, ValueError, KeyError) as exc:
        print(f"boxgrade {command}: {exc}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
