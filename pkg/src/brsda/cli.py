"""Command-line entry point: ``brsda {train,ablate,eval,export-features,gen-synthetic,presets}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import torch

from .ablation import run_ablation, export_features, write_feature_csv
from .config import PRESETS, ExperimentConfig, dump_config, load_config
from .data import save_archive
from .errors import BrsdaError, ConfigError, ShapeError
from .training import evaluate, load_checkpoint, load_dataset, train_run

OUTPUT_ROOT_ENV = "BRSDA_OUTPUT_ROOT"

log = logging.getLogger("brsda")


def output_root(cfg: ExperimentConfig, flag: str | None) -> Path:
    return Path(flag or cfg.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs")


def run_dir(root: Path, cfg: ExperimentConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = root / f"{stamp}_{cfg.digest[:12]}"
    suffix = 1
    while path.exists():
        path = root / f"{stamp}_{cfg.digest[:12]}_{suffix}"
        suffix += 1
    return path


def _split_list(text: str, cast, flag: str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError(f"{flag}: empty list")
    try:
        return [cast(t) for t in items]
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from exc


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    splits = load_dataset(cfg)
    out = run_dir(output_root(cfg, args.output_root), cfg)
    out.mkdir(parents=True)
    dump_config(cfg, out / "config.yaml")
    result = train_run(splits, cfg, out)
    summary = {
        "run_dir": str(out),
        "config_digest": cfg.digest,
        "best_epoch": result.best_epoch,
        "best_val_auc": result.best_val_auc,
        "final_val_auc": result.final["val_auc"],
        "test_best": _json_metrics(result.best_test),
        "test_final": _json_metrics(result.final_test),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(out)
    return 0


def cmd_ablate(args) -> int:
    lams = _split_list(args.lambdas, float, "--lambdas")
    us = _split_list(args.us, int, "--us")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    cfg = load_config(args.config, args.set)
    splits = load_dataset(cfg)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    out = Path(args.out) if args.out else output_root(cfg, None) / f"ablation_{cfg.digest[:12]}.csv"
    run_ablation(splits, cfg, lams, us, seeds, csv_path=out)
    print(out)
    return 0


def _json_metrics(metrics: dict) -> dict:
    return {
        "auc": metrics["auc"],
        "acc": metrics["acc"],
        "per_class_auc": {str(k): v for k, v in metrics["per_class_auc"].items()},
    }


def _checkpoint_dataset(args, cfg: ExperimentConfig, nets):
    if args.data:
        from .data import load_archive

        splits = load_archive(args.data, cfg.dataset.layout)
        if splits.num_classes != nets.num_classes:
            raise ShapeError(
                f"{args.data} has {splits.num_classes} classes but the checkpoint has "
                f"{nets.num_classes}"
            )
    else:
        splits = load_dataset(cfg)
    return splits[args.split]


def cmd_eval(args) -> int:
    nets, cfg, payload = load_checkpoint(args.checkpoint)
    ds = _checkpoint_dataset(args, cfg, nets)
    report = {
        "checkpoint": str(args.checkpoint),
        "split": args.split,
        "n": len(ds),
        **_json_metrics(evaluate(nets, ds)),
        "config_digest": payload["config_digest"],
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_export_features(args) -> int:
    nets, cfg, payload = load_checkpoint(args.checkpoint)
    ds = _checkpoint_dataset(args, cfg, nets)
    gen = torch.Generator().manual_seed(args.seed)
    rows = export_features(nets, ds, cfg, gen)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"features_{args.split}.csv")
    write_feature_csv(out, rows, payload["config_digest"])
    print(out)
    return 0


def cmd_gen_synthetic(args) -> int:
    cfg = load_config(args.config, args.set)
    if cfg.dataset.kind != "synthetic":
        raise ConfigError("dataset.kind: gen-synthetic needs a synthetic dataset section")
    splits = load_dataset(cfg)
    print(save_archive(args.out, splits))
    return 0


def cmd_presets(args) -> int:
    for name in PRESETS:
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brsda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p, required=True):
        p.add_argument("config", nargs=None if required else "?", default="desk-synthetic",
                       help="YAML config path or preset name (see `brsda presets`)")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                       help="override a config entry, e.g. augmentation.lambda=1.0 (repeatable)")

    p = sub.add_parser("train", help="train one model and write a run directory")
    add_config(p)
    p.add_argument("--output-root", help=f"parent of the run directory (default: config "
                   f"output_dir, ${OUTPUT_ROOT_ENV}, or ./runs)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="lambda x U ablation grid against an augmentation-free baseline")
    add_config(p)
    p.add_argument("--lambdas", required=True, help="comma-separated lambda values, e.g. 0.2,0.6")
    p.add_argument("--us", required=True, help="comma-separated U values, e.g. 1,4")
    p.add_argument("--seeds", type=int, default=3, help="seeds per cell, counting up from config seed")
    p.add_argument("--out", help="CSV path (default: <output root>/ablation_<digest>.csv)")
    p.set_defaults(func=cmd_ablate)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint and print metrics JSON"),
        ("export-features", cmd_export_features, "write original and augmented features as CSV"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("checkpoint", help="checkpoint file written by `brsda train`")
        p.add_argument("--data", help="archive to use instead of the checkpoint's dataset")
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        p.add_argument("--out", help="output path")
        if name == "export-features":
            p.add_argument("--seed", type=int, default=0, help="seed for the augmentation draw")
        p.set_defaults(func=func)

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset as an .npz archive")
    add_config(p, required=False)
    p.add_argument("--out", required=True, help="archive path")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("presets", help="list shipped presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BrsdaError as exc:
        print(f"brsda {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
