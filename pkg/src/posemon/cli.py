"""Command-line entry point: ``posemon <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 undefined statistic.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UNDEFINED = 3

log = logging.getLogger("posemon")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _dataset_file(path) -> Path:
    p = Path(path)
    return p / "dataset.jsonl" if p.is_dir() or not p.suffix else p


def _atom_config(args):
    from .learner import AtomConfig

    cfg = AtomConfig()
    if getattr(args, "config", None):
        cfg = AtomConfig.from_dict(json.loads(Path(args.config).read_text()))
    changes = {"seed": args.seed}
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "no_aug", False):
        changes["augment"] = False
    if getattr(args, "no_mask", False):
        changes["use_mask"] = False
    if getattr(args, "no_joints", False):
        changes["use_joints"] = False
    return replace(cfg, **changes)


def _monitor_config(args):
    from .harness import MonitorConfig

    return MonitorConfig(ratio=args.ratio, pixel_gate=args.pixel_gate, canny_low=args.canny_low,
                         canny_high=args.canny_high, kernel=args.kernel, history=args.history,
                         strict_iou=args.strict_iou)


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    from .core import save_dataset
    from .synth import CorruptionSpec, SceneConfig, generate_sequences, mixed_specs

    scene = SceneConfig(width=args.width, height=args.height, clutter_density=args.clutter, clutter_seed=args.seed)
    if args.mixed:
        spec = mixed_specs(args.mixed, probability=args.corrupt_prob)
    else:
        spec = CorruptionSpec(args.eps_pose, args.eps_shape, args.eps_cam, args.corrupt_prob)
    samples = generate_sequences(None, scene, args.subjects, args.frames, spec, seed=args.seed, threads=args.threads)
    out = _dataset_file(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(samples, out)
    print(f"wrote {len(samples)} frames to {out}")
    return EXIT_OK


def _load(path):
    from .core import load_dataset

    return load_dataset(path)


def _split(samples, part: str):
    from .core import split_dataset

    if part == "all":
        return samples
    tr, va, te = split_dataset(samples)
    return {"train": tr, "val": va, "test": te}[part]


def cmd_monitor(args) -> int:
    from .harness import run_monitors
    from .report import write_records_jsonl

    samples = _split(_load(args.dataset), args.split)
    model = None
    if args.model:
        from .learner import load_model
        model = load_model(args.model)
    rep = run_monitors(samples, args.monitors, _monitor_config(args), model, threads=args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records_jsonl(rep, out)
    print(f"scored {len(rep)} frames with {', '.join(rep.polarity)} -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .core import split_dataset
    from .learner import init_model, save_model, train

    cfg = _atom_config(args)
    tr, va, _ = split_dataset(_load(args.dataset))
    if not tr:
        raise ValueError("dataset too small: empty training split")
    model, hist = train(init_model(cfg), tr, va, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    hist_path = out.with_suffix(".history.json")
    hist_path.write_text(json.dumps({"train_mse": hist.train_mse, "val_mse": hist.val_mse,
                                     "best_epoch": hist.best_epoch}, indent=2) + "\n")
    print(f"trained {cfg.epochs} epochs (best {hist.best_epoch}) -> {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .learner import load_model, predict_samples
    from .metrics import LOSS_NAMES

    model = load_model(args.model)
    samples = _split(_load(args.dataset), args.split)
    preds = predict_samples(model, samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for s, p in zip(samples, preds):
            fh.write(json.dumps({"frame_id": s.frame_id,
                                 "predicted": {n: float(v) for n, v in zip(LOSS_NAMES, p)}}) + "\n")
    print(f"predicted {len(samples)} frames -> {out}")
    return EXIT_OK


def _report_from(args):
    from .report import read_records_jsonl

    return read_records_jsonl(args.report)


def cmd_evaluate(args) -> int:
    from .harness import correlation_table, timing_summary
    from .report import emit_report

    rep = _report_from(args)
    table = correlation_table(rep)
    emit_report(args.out, rep, table, timing=timing_summary(rep), figures=not args.no_figures,
                formats=args.formats)
    undefined = [f"{e.monitor}/{e.metric}" for e in table if e.pearson is None]
    for e in table:
        print(f"{e.monitor:>14} {e.metric:>8}  pearson {_show(e.pearson)}  spearman {_show(e.spearman)}  n={e.n}")
    if undefined or not table:
        print("undefined correlation: " + (", ".join(undefined) or "no monitor/metric pairs"), file=sys.stderr)
        return EXIT_UNDEFINED
    return EXIT_OK


def _show(v):
    return "   undef" if v is None else f"{v:+.3f}"


def cmd_prune(args) -> int:
    from .harness import prune_worst
    from .report import emit_report

    rep = _report_from(args)
    results = prune_worst(rep, args.monitor, args.fraction)
    emit_report(args.out, rep, pruning=results, figures=not args.no_figures, formats=args.formats)
    for r in results:
        print(f"{r.metric:>8}: avg {r.full_avg:.4f} -> {r.kept_avg:.4f} ({r.avg_improvement:+.1f}%), "
              f"worst {r.full_worst:.4f} -> {r.kept_worst:.4f} ({r.worst_improvement:+.1f}%)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .core import split_dataset
    from .harness import ablation_means, ablation_run
    from .report import emit_report

    tr, va, te = split_dataset(_load(args.dataset))
    eval_sets = {"test": te}
    if args.shard:
        eval_sets["shard"] = _load(args.shard)
    rows = ablation_run(tr, va, eval_sets, _atom_config(args), seeds=args.seeds, variants=args.variants)
    means = ablation_means(rows)
    emit_report(args.out, None, ablation=means, extra={"ablation_runs": rows}, figures=False)
    if not args.no_figures:
        from .plots import ablation_figure
        ablation_figure(means, Path(args.out) / "figures", args.formats)
    for m in means:
        print(f"{m['variant']:>8} {m['eval_set']:>6}: " + "  ".join(
            f"{k} {_show(v)}" for k, v in m["correlations"].items()))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .harness import bench_monitors
    from .learner import AtomConfig, bench_forward, init_model, load_model
    from .report import emit_report
    from .synth import SceneConfig, generate_sequences, mixed_specs

    model = load_model(args.model) if args.model else init_model(AtomConfig(seed=args.seed))
    atom_s = bench_forward(model, args.frames)
    if args.dataset:
        samples = _load(args.dataset)[:args.frames + 3]
    else:
        samples = generate_sequences(None, SceneConfig(clutter_density=0.5, clutter_seed=args.seed), 1,
                                     args.frames + 3, mixed_specs([0.0, 0.1, 0.2, 0.3]), seed=args.seed)
    timing = bench_monitors(samples, _monitor_config(args))
    timing["atom_forward_s"] = atom_s
    if args.out:
        emit_report(args.out, timing=timing, figures=False)
    for k, v in timing.items():
        print(f"{k:>22}: {v * 1000:8.2f} ms/frame")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _add_monitor_opts(p):
    p.add_argument("--ratio", type=float, default=0.75, help="FeatureM descriptor ratio test")
    p.add_argument("--pixel-gate", type=float, default=26.0, help="FeatureM max match distance (px)")
    p.add_argument("--canny-low", type=float, default=20.0)
    p.add_argument("--canny-high", type=float, default=40.0)
    p.add_argument("--kernel", type=int, default=5, help="CannyM dilation kernel (odd)")
    p.add_argument("--history", type=int, default=5, help="TimeM pose buffer length h")
    p.add_argument("--strict-iou", action="store_true", help="MaskM uses |A&B|/|A|B| instead of the Dice form")


def _add_ablation_flags(p):
    p.add_argument("--config", help="ATOM config JSON (AtomConfig fields)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-aug", action="store_true", help="disable mesh augmentation")
    p.add_argument("--no-mask", action="store_true", help="zero the mask input channel")
    p.add_argument("--no-joints", action="store_true", help="zero the joint inputs")


def _add_figure_opts(p):
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--formats", type=_names, default=["svg"], help="figure formats, e.g. svg,png")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="posemon", description="Score 3D human pose outputs against their images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--clutter", type=float, default=0.5)
    p.add_argument("--eps-pose", type=float, default=0.1)
    p.add_argument("--eps-shape", type=float, default=0.5)
    p.add_argument("--eps-cam", type=float, default=0.05)
    p.add_argument("--corrupt-prob", type=float, default=1.0)
    p.add_argument("--mixed", type=_floats, help="per-frame pose noise levels, e.g. 0,0.1,0.2,0.3")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--out", required=True, help="output directory (or .jsonl path)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("monitor", parents=[common], help="score frames with the model-based monitors")
    p.add_argument("--dataset", required=True)
    p.add_argument("--monitors", type=_names, default=["featurem", "cannym", "timem", "maskm"])
    p.add_argument("--model", help="also score with a trained ATOM model")
    p.add_argument("--split", choices=["all", "train", "val", "test"], default="all")
    p.add_argument("--out", required=True, help="per-frame JSONL report")
    _add_monitor_opts(p)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("train", parents=[common], help="train ATOM on the 50/10 train/val split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="model JSON")
    _add_ablation_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict losses with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["all", "train", "val", "test"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="loss-correlation table from a monitor report")
    p.add_argument("--report", required=True, help="JSONL written by `monitor`")
    p.add_argument("--out", required=True, help="output directory")
    _add_figure_opts(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("prune", parents=[common], help="drop the worst-scored frames and measure the rest")
    p.add_argument("--report", required=True)
    p.add_argument("--monitor", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--out", required=True)
    _add_figure_opts(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("ablate", parents=[common], help="train full/noAug/noMask/noJoint and correlate")
    p.add_argument("--dataset", required=True)
    p.add_argument("--shard", help="extra evaluation dataset")
    p.add_argument("--seeds", type=_ints, default=[0])
    p.add_argument("--variants", type=_names, default=["full", "noAug", "noMask", "noJoint"])
    p.add_argument("--out", required=True)
    _add_ablation_flags(p)
    _add_figure_opts(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", parents=[common], help="time ATOM and the monitor suite per frame")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--out")
    _add_monitor_opts(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    from .core import DatasetError
    from .learner import ModelFormatError, TrainingDiverged
    from .metrics import UndefinedStatistic

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UndefinedStatistic as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (DatasetError, ModelFormatError, TrainingDiverged, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
