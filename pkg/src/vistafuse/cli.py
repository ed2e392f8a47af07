"""Command-line entry point: generate | train | eval | ablate.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 non-finite training loss,
5 checkpoint/config shape mismatch.  Diagnostics go to stderr, summary tables
to stdout.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import harness, synthgen
from .config import FIELD_NAMES, load_config, save_run_json
from .dataset_io import load_manifest
from .errors import DataError, GeometryError, ParameterError, ParseError, ShapeError
from .harness import TrainingDiverged, VisTaNet, apply_checkpoint, attention_map, substream
from .layers import load_checkpoint, save_checkpoint

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NAN = 4
EXIT_SHAPE = 5


def _build_parser():
    parser = argparse.ArgumentParser(prog="vistafuse")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "eval", "ablate"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config file")
        for field in FIELD_NAMES:
            p.add_argument(f"--{field.replace('_', '-')}", dest=field, default=None)
        if name == "eval":
            p.add_argument("--checkpoint", required=True)
        if name == "ablate":
            p.add_argument("--seeds", type=int, default=3, help="number of seeds")
            p.add_argument("--baselines", action="store_true")
    return parser


def _config_from_args(args):
    overrides = {f: getattr(args, f) for f in FIELD_NAMES if getattr(args, f, None) is not None}
    return load_config(args.config, overrides)


def cmd_generate(cfg):
    records = synthgen.generate_dataset(
        cfg.dataset_dir,
        n_specimens_per_class=cfg.n_specimens,
        sweeps_per_specimen=cfg.sweeps_per_specimen,
        images_per_specimen=cfg.images_per_specimen,
        master_seed=cfg.seed,
        classes=cfg.classes,
        image_px=(cfg.image_px_len, cfg.image_px_wid),
        noise_level=cfg.noise_level,
        stick_slip_level=cfg.stick_slip_level,
        sweep_noise_level=cfg.sweep_noise_level,
        sweep_samples=cfg.sweep_samples,
        pitch_jitter=cfg.pitch_jitter,
    )
    counts = {}
    for rec in records:
        counts[rec.class_name] = counts.get(rec.class_name, 0) + 1
    for name in sorted(counts):
        print(f"{name},{counts[name]}")
    print(f"total,{len(records)}")
    return 0


def _load_dataset(cfg):
    manifest_path = os.path.join(cfg.dataset_dir, "manifest.jsonl")
    records = load_manifest(manifest_path)
    items = harness.load_items(cfg.dataset_dir, records, cfg)
    return records, items


def cmd_train(cfg):
    records, items = _load_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_run_json(os.path.join(cfg.out_dir, "run.json"), cfg)
    net, report, _ = harness.run_once(items, records, cfg)
    save_checkpoint(os.path.join(cfg.out_dir, "model.ckpt"), net.params())
    report.save_json(os.path.join(cfg.out_dir, "metrics.json"))
    report.save_confusion_csv(os.path.join(cfg.out_dir, "confusion.csv"))
    if report.per_class_attention is not None:
        attention_map(
            report,
            out_csv=os.path.join(cfg.out_dir, "attention_map.csv"),
            out_pgm=os.path.join(cfg.out_dir, "attention_map.pgm"),
        )
    print(f"accuracy,{report.accuracy!r}")
    return 0


def cmd_eval(cfg, checkpoint_path):
    records, items = _load_dataset(cfg)
    state = load_checkpoint(checkpoint_path)
    net = VisTaNet.build(cfg, substream(cfg.seed, "init"))
    apply_checkpoint(net, state)
    split = harness.split_train_test(records, cfg.split_ratio, cfg.seed)
    report = harness.evaluate(net, items, split, cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_run_json(os.path.join(cfg.out_dir, "run.json"), cfg)
    report.save_json(os.path.join(cfg.out_dir, "metrics.json"))
    report.save_confusion_csv(os.path.join(cfg.out_dir, "confusion.csv"))
    if report.per_class_attention is not None:
        attention_map(
            report,
            out_csv=os.path.join(cfg.out_dir, "attention_map.csv"),
            out_pgm=os.path.join(cfg.out_dir, "attention_map.pgm"),
        )
    print(f"accuracy,{report.accuracy!r}")
    return 0


def cmd_ablate(cfg, n_seeds, baselines):
    records, items = _load_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_run_json(os.path.join(cfg.out_dir, "run.json"), cfg, extra={"seeds": n_seeds, "baselines": baselines})
    rows, _ = harness.ablate_fusion(
        items, records, cfg, seeds=tuple(range(n_seeds)), baselines=baselines
    )
    harness.save_ablation_csv(os.path.join(cfg.out_dir, "ablation.csv"), rows)
    for label, seed, acc in rows:
        print(f"{label},{seed},{acc!r}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.seeds, args.baselines)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, DataError, GeometryError, FileNotFoundError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NAN
    except ShapeError as exc:
        print(f"shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    return 0


if __name__ == "__main__":
    sys.exit(main())
