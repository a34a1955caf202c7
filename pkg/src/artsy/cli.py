"""Command line entry point.

Three subcommands:

  artsy gen-data --out DIR [...]    write a synthetic feature stream to disk
  artsy run [--config FILE] [...]   train through a stream, emit reports
  artsy inspect CHECKPOINT          verify and summarize a saved model

Exit codes: 0 on success, 2 for usage/config/input problems (bad flags, bad
config file, unreadable data, corrupt checkpoint), 3 for failures while
training or evaluating (divergence, sequencing violations).

The ARTSY_OUT environment variable, when set, overrides the output directory
from both the config file and --out.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import inspect_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import TaskStream, gen_gaussian_stream, load_feature_stream, write_feature_stream
from .engine import GATE_MODES, run_experiment, run_sequential_baseline
from .errors import ArtsyError, ConfigError
from .metrics import emit_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _add_stream_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default 7)")
    p.add_argument("--tasks", type=int, default=None, help="number of incremental tasks")
    p.add_argument("--classes-per-task", type=int, default=None, help="classes in each incremental task")
    p.add_argument("--dim", type=int, default=None, help="raw feature dimension")
    p.add_argument("--samples-per-class", type=int, default=None, help="samples per class before the 80/20 split")
    p.add_argument("--separation", type=float, default=None, help="class-mean radius in within-std units")
    p.add_argument("--within-std", type=float, default=None, help="within-class standard deviation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artsy", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic Gaussian feature stream to disk")
    gen.add_argument("--out", required=True, help="output directory for manifest.json and task files")
    _add_stream_flags(gen)
    gen.set_defaults(func=cmd_gen_data)

    run = sub.add_parser(
        "run",
        help="train through a task stream and emit results.json, matrix.csv, curves.csv, checkpoint.artsy",
        epilog="ARTSY_OUT, when set, overrides the output directory from both --out and the config file.",
    )
    run.add_argument("--config", default=None, help="JSON config file; flags below override its values")
    run.add_argument("--out", default=None, help="output directory (default runs/latest)")
    run.add_argument("--manifest", default=None, help="read the stream from this manifest.json instead of generating one")
    _add_stream_flags(run)
    run.add_argument("--baseline", choices=["sequential"], default=None, help="run the fine-tuning control instead of the gated model")
    run.add_argument("--gate-mode", choices=list(GATE_MODES), default=None, help="routing mode (default learned)")
    run.add_argument("--backbone-epochs", type=int, default=None)
    run.add_argument("--backbone-lr", type=float, default=None)
    run.add_argument("--backbone-hidden", default=None, help="comma-separated widths, e.g. 64,64")
    run.add_argument("--adapter-epochs", type=int, default=None)
    run.add_argument("--adapter-lr", type=float, default=None)
    run.add_argument("--bottleneck", type=int, default=None, help="adapter bottleneck width")
    run.add_argument("--alpha", type=float, default=None, help="adapter residual scale")
    run.add_argument("--gate-epochs", type=int, default=None)
    run.add_argument("--gate-lr", type=float, default=None)
    run.add_argument("--gate-hidden", type=int, default=None, help="gate scorer hidden width")
    run.add_argument("--threshold", type=float, default=None, help="gate firing threshold in [0,1]")
    run.add_argument("--threshold-policy", choices=["fixed", "calibrated"], default=None)
    run.add_argument("--buffer-per-class", type=int, default=None, help="replay buffer capacity per class")
    run.add_argument("--scoring", choices=["cosine", "dot"], default=None)
    run.add_argument("--feature-head", choices=["identity", "random_mlp"], default=None)
    run.add_argument("--train-with-old-adapters", action="store_true", default=None,
                     help="include earlier adapters' residuals while training a new one")
    run.add_argument("--eval-threads", type=int, default=None, help="threads for per-task evaluation")
    run.add_argument("--quiet", action="store_true", help="suppress progress lines")
    run.set_defaults(func=cmd_run)

    ins = sub.add_parser("inspect", help="verify a checkpoint's integrity and print its contents")
    ins.add_argument("checkpoint", help="path to a checkpoint.artsy file")
    ins.set_defaults(func=cmd_inspect)

    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()

    stream = cfg.stream
    if args.manifest is not None:
        stream = replace(stream, kind="manifest", manifest=args.manifest)
    for flag, name in [
        ("tasks", "tasks"),
        ("classes_per_task", "classes_per_task"),
        ("dim", "dim"),
        ("samples_per_class", "samples_per_class"),
        ("separation", "separation"),
        ("within_std", "within_std"),
    ]:
        v = getattr(args, flag)
        if v is not None:
            stream = replace(stream, **{name: v})

    backbone = cfg.backbone
    if args.backbone_epochs is not None:
        backbone = replace(backbone, epochs=args.backbone_epochs)
    if args.backbone_lr is not None:
        backbone = replace(backbone, lr=args.backbone_lr)
    if args.backbone_hidden is not None:
        try:
            hidden = [int(w) for w in args.backbone_hidden.split(",") if w.strip()]
        except ValueError:
            raise ConfigError(f"--backbone-hidden must be comma-separated ints, got {args.backbone_hidden!r}")
        backbone = replace(backbone, hidden=hidden)

    adapter = cfg.adapter
    if args.adapter_epochs is not None:
        adapter = replace(adapter, epochs=args.adapter_epochs)
    if args.adapter_lr is not None:
        adapter = replace(adapter, lr=args.adapter_lr)
    if args.bottleneck is not None:
        adapter = replace(adapter, bottleneck=args.bottleneck)
    if args.alpha is not None:
        adapter = replace(adapter, alpha=args.alpha)
    if args.train_with_old_adapters is not None:
        adapter = replace(adapter, train_with_old_adapters=True)

    gate = cfg.gate
    if args.gate_epochs is not None:
        gate = replace(gate, epochs=args.gate_epochs)
    if args.gate_lr is not None:
        gate = replace(gate, lr=args.gate_lr)
    if args.gate_mode is not None:
        gate = replace(gate, mode=args.gate_mode)
    if args.gate_hidden is not None:
        gate = replace(gate, hidden=args.gate_hidden)
    if args.threshold is not None:
        gate = replace(gate, threshold=args.threshold)
    if args.threshold_policy is not None:
        gate = replace(gate, threshold_policy=args.threshold_policy)
    if args.buffer_per_class is not None:
        gate = replace(gate, buffer_per_class=args.buffer_per_class)

    classifier = cfg.classifier
    if args.scoring is not None:
        classifier = replace(classifier, scoring=args.scoring)
    if args.feature_head is not None:
        classifier = replace(classifier, feature_head=args.feature_head)

    ev = cfg.eval
    if args.eval_threads is not None:
        ev = replace(ev, threads=args.eval_threads)

    cfg = replace(cfg, stream=stream, backbone=backbone, adapter=adapter, gate=gate, classifier=classifier, eval=ev)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.baseline is not None:
        cfg = replace(cfg, baseline=args.baseline)
    return cfg.validate()


def _build_stream(cfg: ExperimentConfig) -> TaskStream:
    if cfg.stream.kind == "manifest":
        return load_feature_stream(cfg.stream.manifest)
    return gen_gaussian_stream(
        seed=cfg.seed,
        num_tasks=cfg.stream.tasks,
        classes_per_task=cfg.stream.classes_per_task,
        dim=cfg.stream.dim,
        samples_per_class=cfg.stream.samples_per_class,
        separation=cfg.stream.separation,
        within_std=cfg.stream.within_std,
    )


def cmd_gen_data(args: argparse.Namespace) -> int:
    defaults = ExperimentConfig()
    stream_cfg = defaults.stream
    for name in ("tasks", "classes_per_task", "dim", "samples_per_class", "separation", "within_std"):
        v = getattr(args, name)
        if v is not None:
            stream_cfg = replace(stream_cfg, **{name: v})
    seed = args.seed if args.seed is not None else defaults.seed
    try:
        stream_cfg.validate()
        stream = gen_gaussian_stream(
            seed=seed,
            num_tasks=stream_cfg.tasks,
            classes_per_task=stream_cfg.classes_per_task,
            dim=stream_cfg.dim,
            samples_per_class=stream_cfg.samples_per_class,
            separation=stream_cfg.separation,
            within_std=stream_cfg.within_std,
        )
        manifest = write_feature_stream(stream, args.out)
    except ArtsyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    n_files = 2 * (stream.num_tasks + 1)
    print(f"wrote {manifest} ({stream.num_tasks} incremental tasks + base, {n_files} feature files)")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _config_from_args(args)
        stream = _build_stream(cfg)
    except ArtsyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(os.environ.get("ARTSY_OUT") or cfg.out_dir)
    say = (lambda _msg: None) if args.quiet else print
    snapshot = cfg.snapshot()
    try:
        if cfg.baseline == "sequential":
            _, report = run_sequential_baseline(
                stream, cfg.engine_config(), eval_threads=cfg.eval.threads,
                config_snapshot=snapshot, log=say,
            )
            state = None
        else:
            state, report = run_experiment(
                stream, cfg.engine_config(), eval_threads=cfg.eval.threads,
                config_snapshot=snapshot, log=say,
            )
        paths = emit_report(report, out)
        if state is not None:
            paths["checkpoint"] = save_checkpoint(state, out / "checkpoint.artsy")
    except ArtsyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    for p in paths.values():
        say(f"wrote {p}")
    final = report.steps[-1]
    line = f"final: last={final['last']:.4f} avg={final['avg']:.4f}"
    if final["routing_accuracy"] is not None:
        line += f" routing={final['routing_accuracy']:.4f}"
    print(line)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        info = inspect_checkpoint(args.checkpoint)
    except ArtsyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for key in ("format_version", "step", "seed", "gate_mode", "scoring", "embed_dim",
                "adapters", "gates", "prototypes", "buffer_mode", "sections", "total_params"):
        print(f"{key}: {info[key]}")
    by_task = " ".join(f"task{t}={n}" for t, n in sorted(info["prototypes_by_task"].items(), key=lambda kv: int(kv[0])))
    print(f"prototypes_by_task: {by_task or 'none'}")
    print("param_counts:")
    for name in sorted(info["param_counts"]):
        print(f"  {name}: {info['param_counts'][name]}")
    print("checksums:")
    for name in sorted(info["checksums"]):
        print(f"  {name}: {info['checksums'][name]}")
    print("integrity: ok")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
