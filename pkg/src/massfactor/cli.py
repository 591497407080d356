"""Command-line surface: gen, train, eval, ablate, baseline, report.

Configuration comes from a plain-text ``key = value`` file plus repeatable
``--set key=value`` overrides and a few dedicated flags. Every training or
evaluation run writes a run log, a metrics CSV, and a per-instance
predictions CSV into its output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .errors import ConfigError
from .materials import default_vocab
from .metrics import aggregate, write_report_csv
from .model import ModelConfig
from .synth import GeneratorConfig, generate_dataset, load_dataset, write_dataset
from .train import (
    RunRecord,
    TrainConfig,
    evaluate_model,
    load_model,
    pairs_from_prediction_rows,
    prepare_split,
    read_predictions_csv,
    run_ablation_grid,
    run_baseline_direct,
    run_baseline_rulebased,
    run_training,
    write_predictions_csv,
)

DATA_DIR_ENV = "MASSFACTOR_DATA_DIR"


def _usage_error(parser: argparse.ArgumentParser, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    parser.print_usage(sys.stderr)
    return 2


def parse_config_file(path) -> dict[str, str]:
    """Plain-text ``key = value`` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def collect_settings(args) -> dict[str, str]:
    settings: dict[str, str] = {}
    if getattr(args, "config", None):
        settings.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        settings[key.strip()] = value.strip()
    return settings


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    return type(like)(value)


def _build_dataclass(cls, settings: dict[str, str], overrides: dict):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    for key, value in settings.items():
        if key in names:
            kwargs[key] = _coerce(value, getattr(defaults, key))
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    return cls(**kwargs)


def make_model_config(settings: dict[str, str], args) -> ModelConfig:
    overrides = {
        "feature_dim": args.dim,
        "fusion": args.fusion,
        "n_points": args.points,
        "seed": args.seed,
    }
    if args.cues:
        cues = {c.strip() for c in args.cues.split(",") if c.strip()}
        unknown = cues - {"image", "density", "volume"}
        if unknown:
            raise ConfigError(f"unknown cues: {sorted(unknown)}")
        overrides.update(use_image="image" in cues, use_density="density" in cues,
                         use_volume="volume" in cues)
    return _build_dataclass(ModelConfig, settings, overrides)


def make_train_config(settings: dict[str, str], args) -> TrainConfig:
    overrides = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch,
                 "shuffle_seed": args.seed}
    return _build_dataclass(TrainConfig, settings, overrides)


def _resolve_data_dir(args, parser) -> str | None:
    data = args.data or os.environ.get(DATA_DIR_ENV)
    if not data:
        return None
    if not os.path.exists(os.path.join(data, "manifest.txt")):
        return None
    return data


def _print_report(label: str, record: RunRecord) -> None:
    report = record.reports["test"]
    print(f"{label}: n={report.count} ALDE={report.alde:.4f} APE={report.ape:.4f} "
          f"MnRE={report.mnre:.4f} Q={report.q_rate:.4f} ADE={report.ade:.4f}")
    if record.mean_gate_weights:
        w = record.mean_gate_weights
        print(f"  mean gate weights  image: {w['image']:.2f}, "
              f"geometry: {w['geometry']:.2f}, text: {w['text']:.2f}")


def cmd_gen(args, parser) -> int:
    settings = collect_settings(args)
    cfg = _build_dataclass(GeneratorConfig, settings, {})
    ds = generate_dataset(cfg, args.seed)
    manifest = write_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} samples to {manifest}")
    return 0


def cmd_train(args, parser) -> int:
    data_dir = _resolve_data_dir(args, parser)
    if data_dir is None:
        return _usage_error(parser, "no dataset manifest found (use --data or "
                            f"${DATA_DIR_ENV})")
    settings = collect_settings(args)
    ds = load_dataset(data_dir)
    cfg = make_model_config(settings, args)
    tc = make_train_config(settings, args)
    record = run_training(ds, cfg, tc, args.out)
    _print_report(f"train[{cfg.fusion}, cues={','.join(cfg.enabled_cues())}]", record)
    print(f"artifacts in {args.out}")
    return 0


def cmd_eval(args, parser) -> int:
    data_dir = _resolve_data_dir(args, parser)
    if data_dir is None:
        return _usage_error(parser, "no dataset manifest found (use --data or "
                            f"${DATA_DIR_ENV})")
    if not os.path.exists(args.checkpoint):
        return _usage_error(parser, f"checkpoint {args.checkpoint!r} does not exist")
    ds = load_dataset(data_dir)
    model = load_model(args.checkpoint)
    samples = ds.split(args.split)
    if not samples:
        return _usage_error(parser, f"split {args.split!r} is empty")
    prepared = prepare_split(samples, model.cfg.n_points, float(ds.meta["pixel_m"]),
                             model.cfg.use_volume)
    pairs, rows = evaluate_model(model, prepared)
    report = aggregate(pairs, stratify="seen_unseen")
    os.makedirs(args.out, exist_ok=True)
    write_predictions_csv(rows, os.path.join(args.out, f"predictions_{args.split}.csv"))
    write_report_csv(report, os.path.join(args.out, f"metrics_{args.split}.csv"))
    print(f"eval[{args.split}]: n={report.count} ALDE={report.alde:.4f} "
          f"APE={report.ape:.4f} MnRE={report.mnre:.4f} Q={report.q_rate:.4f} "
          f"ADE={report.ade:.4f}")
    return 0


def cmd_ablate(args, parser) -> int:
    data_dir = _resolve_data_dir(args, parser)
    if data_dir is None:
        return _usage_error(parser, "no dataset manifest found (use --data or "
                            f"${DATA_DIR_ENV})")
    settings = collect_settings(args)
    ds = load_dataset(data_dir)
    cfg = make_model_config(settings, args)
    tc = make_train_config(settings, args)
    records = run_ablation_grid(ds, cfg, tc, args.out)
    for record in records:
        m = record.config["model"]
        cues = [c for c in ("image", "density", "volume") if m[f"use_{c}"]]
        _print_report("+".join(cues), record)
    print(f"grid written to {os.path.join(args.out, 'ablation.csv')}")
    return 0


def cmd_baseline(args, parser) -> int:
    data_dir = _resolve_data_dir(args, parser)
    if data_dir is None:
        return _usage_error(parser, "no dataset manifest found (use --data or "
                            f"${DATA_DIR_ENV})")
    settings = collect_settings(args)
    ds = load_dataset(data_dir)
    if args.kind == "direct":
        tc = make_train_config(settings, args)
        record = run_baseline_direct(ds, tc, seed=args.seed or 0, out_dir=args.out)
        _print_report("baseline[direct]", record)
    else:
        volume_model = None
        if args.volume_checkpoint:
            volume_model = load_model(args.volume_checkpoint)
        record = run_baseline_rulebased(ds, default_vocab(), volume_model, args.out)
        _print_report("baseline[rulebased]", record)
        print(f"  excluded unknown-material samples: {record.extra['excluded_unknown']}")
    return 0


def cmd_report(args, parser) -> int:
    if not os.path.exists(args.predictions):
        return _usage_error(parser, f"predictions file {args.predictions!r} does not exist")
    rows = read_predictions_csv(args.predictions)
    pairs = pairs_from_prediction_rows(rows)
    report = aggregate(pairs, stratify=args.stratify)
    write_report_csv(report, args.out)
    print(f"recomputed metrics for {report.count} predictions into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="massfactor",
        description="Factored volume/density mass estimation on a synthetic benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_train=True):
        p.add_argument("--config", help="plain-text key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key (repeatable)")
        p.add_argument("--seed", type=int, help="run seed")
        if with_train:
            p.add_argument("--data", help=f"dataset directory (default ${DATA_DIR_ENV})")
            p.add_argument("--epochs", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--batch", type=int)
            p.add_argument("--dim", type=int, help="feature width D")
            p.add_argument("--points", type=int, help="points per cloud N")
            p.add_argument("--fusion", choices=("concat", "self_attn", "gated"))
            p.add_argument("--cues", help="comma list from image,density,volume")

    p_gen = sub.add_parser("gen", help="synthesize a benchmark dataset")
    add_common(p_gen, with_train=False)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen, seed=0)

    p_train = sub.add_parser("train", help="train the factored model")
    add_common(p_train)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", help=f"dataset directory (default ${DATA_DIR_ENV})")
    p_eval.add_argument("--split", default="test",
                        choices=("train", "test", "test_seen", "test_unseen"))
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train all 7 cue subsets")
    add_common(p_ablate)
    p_ablate.add_argument("--out", required=True)
    p_ablate.set_defaults(func=cmd_ablate)

    p_base = sub.add_parser("baseline", help="run a baseline")
    add_common(p_base)
    p_base.add_argument("--kind", required=True, choices=("direct", "rulebased"))
    p_base.add_argument("--volume-checkpoint",
                        help="geometry-only checkpoint for the rule-based volume source")
    p_base.add_argument("--out", required=True)
    p_base.set_defaults(func=cmd_baseline)

    p_report = sub.add_parser("report", help="recompute metrics from stored predictions")
    p_report.add_argument("--predictions", required=True)
    p_report.add_argument("--stratify", default="seen_unseen",
                          choices=("none", "seen_unseen", "category"))
    p_report.add_argument("--out", required=True)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        return _usage_error(parser, str(exc))


if __name__ == "__main__":
    sys.exit(main())
