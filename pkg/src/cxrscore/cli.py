"""Command line entry point.

Subcommands wire the library into reproducible batch workflows:

  synth    generate a labeled synthetic dataset (PNGs + manifest)
  augment  expand a manifest with half swaps, flips, cutmix, mixup
  train    optimize a model from a JSON config, emit trace + checkpoints
  eval     score a checkpoint against a manifest, emit report + predictions
  attnmap  render attention heatmap + overlay for one image
  report   re-render plots from a saved report JSON

Every run writes run.json with the fully resolved configuration. Exit codes:
0 success, 1 validation error, 2 runtime failure. With --threads 1 (the
default) outputs that carry no wall-clock times are byte-identical across
reruns of the same command and seed.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

import torch

from . import __version__
from .augment import CutMixParams, expand_dataset, hflip, score_cutmix, score_mixup
from .data import (
    CxrSample,
    PreprocessConfig,
    load_image,
    load_manifest,
    preprocess,
    save_dataset,
    split_train_val,
)
from .errors import CliUsageError, ConfigurationError, CxrScoreError
from .evaluation import EvalReport, evaluate, write_predictions_csv, write_report_json
from .model import (
    AGGREGATIONS,
    VitConfig,
    extract_attention,
    init_weights,
    load_weights,
    read_checkpoint_config,
    save_checkpoint,
    upsample_map,
)
from .seeding import ROLE_AUGMENT_CLI, ROLE_INIT, int_seed, rng_for
from .synth import synth_dataset
from .training import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _write_run_json(out_dir: str, payload: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {"version": __version__, **payload}
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_synth(args) -> None:
    samples = synth_dataset(args.n, (args.size, args.size), args.seed)
    save_dataset(samples, args.out)
    _write_run_json(
        args.out,
        {
            "subcommand": "synth",
            "n": args.n,
            "size": args.size,
            "seed": args.seed,
            "out": args.out,
        },
    )
    print(f"wrote {len(samples)} samples to {args.out}")


def _cmd_augment(args) -> None:
    originals = load_manifest(args.manifest)
    params = CutMixParams(args.lambda_min, args.lambda_max, args.seed)
    out = expand_dataset(originals, args.seed) if args.replacement else list(originals)
    if args.hflip:
        out.extend(hflip(s) for s in originals)
    rng = rng_for(args.seed, ROLE_AUGMENT_CLI)
    n = len(originals)
    for j in range(args.cutmix):
        a, b = (originals[int(i)] for i in rng.integers(0, n, size=2))
        mixed = score_cutmix(a, b, params, rng)
        mixed.source_id = f"cm-{j:05d}"
        out.append(mixed)
    for j in range(args.mixup):
        a, b = (originals[int(i)] for i in rng.integers(0, n, size=2))
        lam = float(rng.uniform(0.0, 1.0))
        mixed = score_mixup(a, b, lam)
        mixed.source_id = f"mx-{j:05d}"
        out.append(mixed)
    save_dataset(out, args.out)
    _write_run_json(
        args.out,
        {
            "subcommand": "augment",
            "manifest": args.manifest,
            "seed": args.seed,
            "replacement": args.replacement,
            "hflip": args.hflip,
            "cutmix": args.cutmix,
            "mixup": args.mixup,
            "lambda_min": args.lambda_min,
            "lambda_max": args.lambda_max,
            "out": args.out,
        },
    )
    print(f"wrote {len(out)} samples to {args.out}")


_CONFIG_SECTIONS = ("model", "preprocess", "train", "data")
_DATA_KEYS = ("train_manifest", "val_manifest", "val_fraction")


def _parse_override(text: str) -> tuple[str, str, object]:
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    if "." not in key:
        raise ConfigurationError(f"override key {key!r} is not of the form section.key")
    section, name = key.split(".", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, name, value


def _resolve_train_config(
    config_path: str, overrides: list[str], seed_flag: int | None
) -> tuple[VitConfig, PreprocessConfig, TrainConfig, dict]:
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {config_path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {config_path!r} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    unknown = set(raw) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    sections = {name: dict(raw.get(name, {})) for name in _CONFIG_SECTIONS}
    for text in overrides:
        section, name, value = _parse_override(text)
        if section not in _CONFIG_SECTIONS:
            raise ConfigurationError(f"unknown config section {section!r} in override {text!r}")
        sections[section][name] = value
    if seed_flag is not None:
        sections["train"]["seed"] = seed_flag
    allowed = {
        "model": {f.name for f in fields(VitConfig)},
        "preprocess": {f.name for f in fields(PreprocessConfig)},
        "train": {f.name for f in fields(TrainConfig)},
        "data": set(_DATA_KEYS),
    }
    for name, section in sections.items():
        extra = set(section) - allowed[name]
        if extra:
            raise ConfigurationError(f"unknown keys in config section {name!r}: {sorted(extra)}")
    model_cfg = VitConfig(**sections["model"])
    pre_section = dict(sections["preprocess"])
    pre_section.setdefault("target_height", model_cfg.image_height)
    pre_section.setdefault("target_width", model_cfg.image_width)
    for key in ("mean", "std"):
        if key in pre_section and isinstance(pre_section[key], list):
            pre_section[key] = tuple(pre_section[key])
    pre_cfg = PreprocessConfig(**pre_section)
    train_cfg = TrainConfig(**sections["train"])
    data = sections["data"]
    if "train_manifest" not in data:
        raise ConfigurationError("config data.train_manifest is required")
    data.setdefault("val_manifest", None)
    data.setdefault("val_fraction", 0.2)
    return model_cfg, pre_cfg, train_cfg, data


def _cmd_train(args) -> None:
    torch.set_num_threads(args.threads)
    model_cfg, pre_cfg, train_cfg, data = _resolve_train_config(
        args.config, args.set or [], args.seed
    )
    train_samples = load_manifest(data["train_manifest"])
    if data["val_manifest"]:
        val_samples = load_manifest(data["val_manifest"])
    else:
        train_samples, val_samples = split_train_val(
            train_samples, float(data["val_fraction"]), train_cfg.seed
        )
    model = init_weights(model_cfg, int_seed(train_cfg.seed, ROLE_INIT))
    result = train(model, train_samples, val_samples, train_cfg, pre_cfg)
    os.makedirs(args.out, exist_ok=True)
    result.trace.write_csv(os.path.join(args.out, "trace.csv"), zero_seconds=args.threads == 1)
    save_checkpoint(model, os.path.join(args.out, "final.ckpt"))
    model.load_state_dict(result.best_state)
    save_checkpoint(model, os.path.join(args.out, "best.ckpt"))
    _write_run_json(
        args.out,
        {
            "subcommand": "train",
            "config_path": args.config,
            "overrides": list(args.set or []),
            "threads": args.threads,
            "model": asdict(model_cfg),
            "preprocess": asdict(pre_cfg),
            "train": asdict(train_cfg),
            "data": data,
            "out": args.out,
        },
    )
    last = result.trace.rows[-1]
    print(
        f"trained {train_cfg.epochs} epochs; final train loss {last.train_loss:.4f}, "
        f"best val MAE {result.best_val_mae:.4f} at epoch {result.best_epoch}"
    )


def _preprocess_config_for(model_cfg: VitConfig, mean: float, std: float) -> PreprocessConfig:
    return PreprocessConfig(
        target_height=model_cfg.image_height,
        target_width=model_cfg.image_width,
        mean=(mean, mean, mean),
        std=(std, std, std),
    )


def _cmd_eval(args) -> None:
    torch.set_num_threads(args.threads)
    model_cfg = read_checkpoint_config(args.checkpoint)
    model = load_weights(model_cfg, args.checkpoint)
    samples = load_manifest(args.manifest)
    pre_cfg = _preprocess_config_for(model_cfg, args.mean, args.std)
    report = evaluate(
        model,
        samples,
        pre_cfg,
        batch_size=args.batch_size,
        histogram_bins=args.bins,
        cmc_step=args.cmc_step,
        clamp_to_range=args.clamp,
    )
    os.makedirs(args.out, exist_ok=True)
    write_report_json(report, os.path.join(args.out, "report.json"))
    write_predictions_csv(report, os.path.join(args.out, "predictions.csv"))
    if args.plots:
        from .plots import save_cmc_plot, save_histogram_plot, save_scatter_plot

        save_cmc_plot(report, os.path.join(args.out, "cmc.png"))
        save_histogram_plot(report, os.path.join(args.out, "histogram.png"))
        save_scatter_plot(report, os.path.join(args.out, "scatter.png"))
    _write_run_json(
        args.out,
        {
            "subcommand": "eval",
            "checkpoint": args.checkpoint,
            "manifest": args.manifest,
            "batch_size": args.batch_size,
            "bins": args.bins,
            "cmc_step": args.cmc_step,
            "clamp": args.clamp,
            "mean": args.mean,
            "std": args.std,
            "threads": args.threads,
            "plots": args.plots,
            "out": args.out,
        },
    )
    print(f"n={len(report.predictions)} mae={report.mae:.4f} pearson={report.pearson:.4f}")


def _cmd_attnmap(args) -> None:
    torch.set_num_threads(args.threads)
    model_cfg = read_checkpoint_config(args.checkpoint)
    model = load_weights(model_cfg, args.checkpoint)
    if args.layer == "last":
        layer = model_cfg.depth - 1
    else:
        try:
            layer = int(args.layer)
        except ValueError:
            raise CliUsageError(f"--layer must be 'last' or an integer, got {args.layer!r}") from None
    image = load_image(args.image)
    sample = CxrSample(
        image=image, score_total=0.0, score_kind="synthetic", source_id="attnmap-input"
    )
    pre_cfg = _preprocess_config_for(model_cfg, args.mean, args.std)
    tensor = preprocess(sample, pre_cfg)
    amap = extract_attention(model, tensor, layer, aggregation=args.aggregation, head=args.head)
    heat = upsample_map(amap, model_cfg.image_height, model_cfg.image_width)
    display_cfg = _preprocess_config_for(model_cfg, 0.0, 1.0)
    display = preprocess(sample, display_cfg).numpy()
    from .plots import save_attention_images

    os.makedirs(args.out, exist_ok=True)
    save_attention_images(
        display,
        heat,
        os.path.join(args.out, "heatmap.png"),
        os.path.join(args.out, "overlay.png"),
    )
    half = amap.grid.shape[1] // 2
    total = float(amap.grid.sum())
    left = float(amap.grid[:, :half].sum()) / total if total > 0 else 0.0
    _write_run_json(
        args.out,
        {
            "subcommand": "attnmap",
            "checkpoint": args.checkpoint,
            "image": args.image,
            "layer": layer,
            "aggregation": args.aggregation,
            "head": args.head,
            "mean": args.mean,
            "std": args.std,
            "threads": args.threads,
            "out": args.out,
        },
    )
    print(
        f"layer {layer} {args.aggregation}: cls weight {amap.cls_weight:.4f}, "
        f"left-half mass {left:.4f}, right-half mass {1.0 - left:.4f}"
    )


def _cmd_report(args) -> None:
    from .plots import save_cmc_plot, save_histogram_plot, save_scatter_plot

    try:
        with open(args.report) as fh:
            report = EvalReport.from_dict(json.load(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read report {args.report!r}: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"report {args.report!r} is malformed: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    ext = args.format
    save_cmc_plot(report, os.path.join(args.out, f"cmc.{ext}"))
    save_histogram_plot(report, os.path.join(args.out, f"histogram.{ext}"))
    save_scatter_plot(report, os.path.join(args.out, f"scatter.{ext}"))
    _write_run_json(
        args.out,
        {"subcommand": "report", "report": args.report, "format": ext, "out": args.out},
    )
    print(f"wrote cmc.{ext}, histogram.{ext}, scatter.{ext} to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cxrscore", description="Severity score regression pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--n", type=_positive_int, required=True, help="number of samples")
    p.add_argument("--size", type=_positive_int, default=64, help="square image size in pixels")
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("augment", help="expand a dataset with score-aware augmentations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument(
        "--replacement",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="apply the half-swap expansion (default on)",
    )
    p.add_argument("--hflip", action="store_true", help="append flipped copies of the originals")
    p.add_argument("--cutmix", type=_nonnegative_int, default=0, metavar="N", help="append N cutmix samples")
    p.add_argument("--mixup", type=_nonnegative_int, default=0, metavar="N", help="append N mixup samples")
    p.add_argument("--lambda-min", type=float, default=0.5, dest="lambda_min")
    p.add_argument("--lambda-max", type=float, default=0.9, dest="lambda_max")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override a config value (repeatable)",
    )
    p.add_argument("--seed", type=_nonnegative_int, default=None, help="override train.seed")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=_positive_int, default=32, dest="batch_size")
    p.add_argument("--bins", type=_positive_int, default=16)
    p.add_argument("--cmc-step", type=float, default=0.25, dest="cmc_step")
    p.add_argument("--clamp", action="store_true", help="clamp predictions to the score range")
    p.add_argument("--mean", type=float, default=0.5)
    p.add_argument("--std", type=float, default=0.25)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--plots", action="store_true", help="also write cmc/histogram/scatter PNGs")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("attnmap", help="render an attention heatmap for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", default="last", help="'last' or a 0-based layer index")
    p.add_argument("--aggregation", choices=AGGREGATIONS, default="mean_heads")
    p.add_argument("--head", type=_nonnegative_int, default=None)
    p.add_argument("--mean", type=float, default=0.5)
    p.add_argument("--std", type=float, default=0.25)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.set_defaults(func=_cmd_attnmap)

    p = sub.add_parser("report", help="render plots from a saved report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("png", "svg"), default="png")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except SystemExit as exc:  # --help and friends
        code = exc.code
        return int(code) if isinstance(code, int) else 0
    except CxrScoreError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
