"""Command-line entry point: train, eval, predict, verify, and inspect.

Configuration is file-first (JSON) with one flag per config key, so a run is
reproducible from its ``--dump-config`` output alone. Exit codes: 0 success,
1 runtime failure (e.g. divergence), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import load_checkpoint
from .config import RunConfig, apply_overrides, config_from_dict, dump_config, field_paths
from .data import default_palette, load_palette
from .errors import CheckpointError, ConfigError, DataError, DivergenceError, WavesegError
from .evaluation import evaluate, export_colormap
from .models import VARIANTS, ModelConfig, NetworkGraph, build_model, param_count, shape_trace
from .tensor import Tensor4
from .training import train
from .verify import run_all

_CONFIG_DEST = "__config_overrides__"


def _parse_flag_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


class _ConfigFlag(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        overrides = getattr(namespace, _CONFIG_DEST, None)
        if overrides is None:
            overrides = {}
            setattr(namespace, _CONFIG_DEST, overrides)
        overrides[option_string.lstrip("-")] = _parse_flag_value(values)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (mirror config keys one-to-one)")
    for path, default in field_paths():
        group.add_argument(f"--{path}", action=_ConfigFlag, metavar="VALUE",
                           help=f"override {path} (default: {default!r})")


def _resolve_config(args) -> RunConfig:
    payload = {}
    if args.config is not None:
        payload = json.loads(Path(args.config).read_text())
    overrides = getattr(args, _CONFIG_DEST, None) or {}
    apply_overrides(payload, overrides)
    return config_from_dict(payload)


def _build_with_checkpoint(cfg: RunConfig, checkpoint: str) -> NetworkGraph:
    graph = build_model(cfg.model, seed=cfg.seed)
    state, _meta = load_checkpoint(checkpoint)
    graph.load_state_dict(state, path=str(checkpoint))
    return graph


def _maybe_dump(args, cfg: RunConfig) -> bool:
    if getattr(args, "dump_config", False):
        sys.stdout.write(dump_config(cfg))
        return True
    return False


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if _maybe_dump(args, cfg):
        return 0
    out_dir = args.out_dir or cfg.train.out_dir
    if out_dir is None:
        out_dir = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-s{cfg.seed}"
    out_dir = Path(out_dir)
    train_set = cfg.load_split(cfg.data.train_split)
    if not train_set:
        raise DataError(f"training split {cfg.data.train_split!r} is empty")
    val_set = cfg.load_split(cfg.data.val_split)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dump_config(cfg))
    try:
        result = train(
            cfg.model,
            cfg.optim,
            cfg.loss,
            train_set,
            epochs=cfg.train.epochs,
            seed=cfg.seed,
            val_dataset=val_set or None,
            out_dir=out_dir,
            max_iterations=cfg.train.max_iterations,
            checkpoint_every=cfg.train.checkpoint_every,
            val_every=cfg.train.val_every,
            stop_miou=cfg.train.stop_miou,
            verbose=not args.quiet,
        )
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.last_checkpoint is not None:
            print(f"last-good checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return 1
    print(f"trained {result.iterations} iterations; checkpoint: {result.checkpoint_path}")
    if result.final_val_miou is not None:
        print(f"final validation mIoU: {result.final_val_miou:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    if _maybe_dump(args, cfg):
        return 0
    graph = _build_with_checkpoint(cfg, args.checkpoint)
    dataset = cfg.load_split(args.split or cfg.data.val_split)
    if not dataset:
        raise DataError("evaluation split is empty")
    use_ms = args.ms or cfg.eval.ms
    scales = cfg.eval.scales if use_ms else None
    report = evaluate(graph, dataset, num_classes=cfg.data.num_classes, scales=scales,
                      ignore_label=cfg.data.ignore_label, batch_size=cfg.optim.batch_size)
    text = report.to_text()
    sys.stdout.write(text)
    report_path = args.report or cfg.eval.report
    if report_path:
        Path(report_path).write_text(text)
    records_path = args.records or cfg.eval.records
    if records_path:
        with open(records_path, "w") as fh:
            for rec in report.to_records():
                fh.write(json.dumps(rec) + "\n")
    return 0


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255.0


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    if _maybe_dump(args, cfg):
        return 0
    graph = _build_with_checkpoint(cfg, args.checkpoint)
    palette = load_palette(args.palette) if args.palette else default_palette(cfg.model.num_classes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    div = graph.config.entry_divisor()
    for path in (Path(p) for p in args.images):
        image = _load_image(path)
        _, h, w = image.shape
        ph = (div - h % div) % div
        pw = (div - w % div) % div
        if ph or pw:
            padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="edge")
            print(f"{path.name}: padded {h}x{w} -> {h + ph}x{w + pw} (multiple of {div}), cropped back after inference")
        else:
            padded = image
        logits = graph.forward(Tensor4(padded[None], dtype=graph.config.dtype))
        prediction = logits.data[0, :, :h, :w].argmax(axis=0)
        out_path = out_dir / f"{path.stem}_pred.png"
        export_colormap(prediction, palette, out_path)
        print(f"{path.name}: wrote {out_path}")
    return 0


def cmd_verify(args) -> int:
    results = run_all(gradient_instances=args.gradient_instances)
    return 0 if all(r.passed for r in results) else 1


def cmd_inspect(args) -> int:
    cfg = _resolve_config(args)
    if args.full_scale:
        cfg.model = ModelConfig(variant=cfg.model.variant, num_classes=cfg.model.num_classes)
    if _maybe_dump(args, cfg):
        return 0
    rows = shape_trace(cfg.model)
    name_w = max(len(r.layer) for r in rows) + 2
    op_w = max(len(r.operation) for r in rows) + 2
    in_w = max(len(r.inputs) for r in rows) + 2
    print(f"{'layer':<{name_w}}{'operation':<{op_w}}{'input':<{in_w}}dimension")
    for r in rows:
        print(f"{r.layer:<{name_w}}{r.operation:<{op_w}}{r.inputs:<{in_w}}{r.out_h}x{r.out_w}, {r.channels}")
    print()
    counts = {}
    for variant in VARIANTS:
        vcfg = ModelConfig(**{**cfg.model.__dict__, "variant": variant})
        counts[variant] = param_count(build_model(vcfg, seed=cfg.seed))
    width = max(len(v) for v in VARIANTS) + 2
    print(f"{'variant':<{width}}parameters")
    for variant, count in counts.items():
        print(f"{variant:<{width}}{count:,}")
    print()
    for wavelet_variant, base_variant in (("wavelet_lfp", "baseline_lfp"), ("wavelet_ffc", "baseline_ffc")):
        delta = counts[base_variant] - counts[wavelet_variant]
        print(f"{wavelet_variant} saves {delta:,} parameters vs {base_variant} (learned unpooling removed)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waveseg",
                                     description="wavelet encoder-decoder segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("-c", "--config", required=config_required, help="JSON run config")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
        _add_config_flags(p)

    p_train = sub.add_parser("train", help="train a model from a run config")
    common(p_train)
    p_train.add_argument("--out-dir", default=None, help="run directory (default: runs/<timestamp>-s<seed>)")
    p_train.add_argument("--quiet", action="store_true", help="suppress per-epoch progress lines")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint (per-class and mean IoU)")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file to evaluate")
    p_eval.add_argument("--ms", action="store_true", help="also report multi-scale fused scores")
    p_eval.add_argument("--split", default=None, help="dataset split (default: config val split)")
    p_eval.add_argument("--report", default=None, help="write the text report here")
    p_eval.add_argument("--records", default=None, help="write line-delimited JSON records here")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="write color-mapped predictions for images")
    common(p_pred)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--out-dir", required=True)
    p_pred.add_argument("--palette", default=None, help="palette file, one #rrggbb per class line")
    p_pred.add_argument("images", nargs="+", help="input PNG images")
    p_pred.set_defaults(func=cmd_predict)

    p_verify = sub.add_parser("verify", help="run the invariant suites (reconstruction, adjoint, gradients, shapes)")
    p_verify.add_argument("--gradient-instances", type=int, default=3)
    p_verify.set_defaults(func=cmd_verify)

    p_inspect = sub.add_parser("inspect", help="print the per-layer shape trace and parameter counts")
    common(p_inspect)
    p_inspect.add_argument("--full-scale", action="store_true",
                           help="trace the full-scale configuration (512x1024 input, width 1)")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None and args.command in ("eval", "predict"):
        parser.error(f"{args.command} requires --config")
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError) and "variant" in str(exc):
            print(f"valid variants: {', '.join(VARIANTS)}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WavesegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON config: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
