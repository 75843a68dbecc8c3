"""Command-line front end: train, add-style, stylize, fuse, segment, analyze, serve.

Exit codes: 0 success, 1 module error (diagnostic on stderr), 2 flag misuse
(argparse default). ``STYLEBANK_MODEL`` supplies the model path when
``--model`` is omitted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, images
from .losses import FeatureExtractor, LossWeights
from .model import StyleBankModel, fuse_linear
from .pipeline import fuse_regions_image, segment_image, stylize_image, stylize_with_bank
from .service import DEFAULT_MAX_SIDE, DEFAULT_PORT, ModelHolder, create_app
from .train import LrSchedule, TrainConfig, TrainingDiverged, add_style_incremental, train

logger = logging.getLogger(__name__)

MODEL_ENV = "STYLEBANK_MODEL"


def _model_path(args) -> str:
    path = getattr(args, "model", None) or os.environ.get(MODEL_ENV)
    if not path:
        raise ValueError(f"no model given: pass --model or set {MODEL_ENV}")
    return path


def _load_model(args):
    return checkpoint.load_model(_model_path(args))


def _load_dataset(content_dir: str):
    paths = sorted(Path(content_dir).glob("*.png"))
    if not paths:
        raise ValueError(f"no .png content images in {content_dir}")
    return [images.load_image(p) for p in paths]


def _parse_styles(pairs):
    styles = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"style must be name=path, got {pair!r}")
        name, path = pair.split("=", 1)
        if name in styles:
            raise ValueError(f"duplicate style name {name!r}")
        styles[name] = images.load_image(path)
    return styles


def _parse_weights(text):
    weights = {}
    for item in text.split(","):
        if "=" not in item:
            raise ValueError(f"weights must be name=value pairs, got {item!r}")
        name, value = item.split("=", 1)
        weights[name.strip()] = float(value)
    return weights


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        stylizing_steps=args.branch_steps,
        branch_tradeoff=args.branch_tradeoff,
        batch_size=args.batch_size,
        total_iterations=args.iters,
        lr=LrSchedule(args.lr, args.lr_decay, args.lr_interval),
        crop_size=args.crop,
        seed=args.seed,
        loss_weights=LossWeights(args.alpha, args.beta, args.gamma),
        style_size=args.style_size,
    )


def _add_train_flags(p: argparse.ArgumentParser, iters: int) -> None:
    p.add_argument("--iters", type=int, default=iters, help="total iterations")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--crop", type=int, default=64, help="crop size (multiple of 8)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--branch-steps", "-T", type=int, default=2,
                   help="stylizing steps per cycle")
    p.add_argument("--branch-tradeoff", type=float, default=1.0,
                   help="identity-branch gradient tradeoff (lambda)")
    p.add_argument("--lr", type=float, default=LrSchedule().initial)
    p.add_argument("--lr-decay", type=float, default=0.8)
    p.add_argument("--lr-interval", type=int, default=30_000)
    p.add_argument("--alpha", type=float, default=1.0, help="content weight")
    p.add_argument("--beta", type=float, default=50.0, help="style weight")
    p.add_argument("--gamma", type=float, default=1e-5, help="tv weight")
    p.add_argument("--style-size", type=int, default=128,
                   help="style images rescaled to this long side")
    p.add_argument("--metrics", help="write per-iteration CSV here")
    p.add_argument("--extractor-weights",
                   help="checkpoint with extractor/ entries to use instead of "
                        "the seeded random extractor")


def _extractor_from(args) -> FeatureExtractor:
    if getattr(args, "extractor_weights", None):
        return checkpoint.load_extractor(args.extractor_weights)
    return FeatureExtractor.random()


def _dump_divergence(err: TrainingDiverged, out_path: str) -> None:
    dump_path = out_path + ".diverged.json"
    with open(dump_path, "w") as fh:
        json.dump(err.diagnostics, fh, indent=2)
    print(f"training diverged; state dump written to {dump_path}", file=sys.stderr)


def cmd_train(args) -> int:
    dataset = _load_dataset(args.content_dir)
    styles = _parse_styles(args.style)
    config = _train_config(args)
    model = StyleBankModel.create(
        list(styles), c_max=args.c_max, bank_kernel_size=args.bank_kernel,
        seed=args.seed,
    )
    extractor = _extractor_from(args)
    try:
        model, metrics = train(model, dataset, styles, config, extractor,
                               metrics_path=args.metrics)
    except TrainingDiverged as err:
        _dump_divergence(err, args.out)
        return 1
    checkpoint.save_model(args.out, model, extractor)
    totals = metrics.stylizing_totals()
    print(f"trained {len(styles)} styles for {args.iters} iterations; "
          f"stylizing loss {totals[0]:.5f} -> {totals[-1]:.5f}")
    print(f"model written to {args.out}")
    return 0


def cmd_add_style(args) -> int:
    model, extractor = _load_model(args)
    if extractor is None:
        extractor = _extractor_from(args)
    dataset = _load_dataset(args.content_dir)
    name = args.name or Path(args.style_image).stem
    style_image = images.load_image(args.style_image)
    config = _train_config(args)
    try:
        model, metrics = add_style_incremental(
            model, dataset, name, style_image, config, extractor,
            metrics_path=args.metrics,
        )
    except TrainingDiverged as err:
        _dump_divergence(err, args.out)
        return 1
    checkpoint.save_model(args.out, model, extractor)
    losses = [r["L_s"] for r in metrics.rows]
    print(f"style {name!r} trained for {args.iters} iterations; "
          f"style loss {losses[0]:.6f} -> {losses[-1]:.6f}")
    print(f"model written to {args.out}")
    return 0


def cmd_stylize(args) -> int:
    model, _ = _load_model(args)
    image = images.load_image(args.input)
    result = stylize_image(model, image, args.style)
    result.save(args.out)
    print(f"stylized {args.input} with {args.style!r} -> {args.out}")
    return 0


def cmd_fuse(args) -> int:
    model, _ = _load_model(args)
    weights = _parse_weights(args.weights)
    for name in weights:
        model.bank(name)
    bank = fuse_linear([model.bank(n) for n in weights], list(weights.values()))
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        normalized = {n: w / total for n, w in weights.items()}
        print(f"weights normalized to sum 1: {normalized}")
    image = images.load_image(args.input)
    stylize_with_bank(model, image, bank).save(args.out)
    print(f"fused {list(weights)} -> {args.out}")
    return 0


def cmd_segment(args) -> int:
    model, _ = _load_model(args)
    image = images.load_image(args.input)
    labels = segment_image(model, image, args.k, args.seed)
    images.save_label_map(labels, args.out)
    print(f"segmented into {len(np.unique(labels))} regions -> {args.out}")
    return 0


def cmd_fuse_regions(args) -> int:
    model, _ = _load_model(args)
    image = images.load_image(args.input)
    labels = images.load_label_map(args.labels)
    assignment = {}
    for item in args.assign.split(","):
        label, style = item.split("=", 1)
        assignment[int(label)] = style.strip()
    fuse_regions_image(model, image, labels, assignment).save(args.out)
    print(f"region-fused {len(assignment)} assignments -> {args.out}")
    return 0


def cmd_analyze(args) -> int:
    from .analysis import sparsity_stats

    model, _ = _load_model(args)
    dataset = _load_dataset(args.images)
    report = sparsity_stats(model, dataset)
    report.write_csv(args.out)
    print(f"per-channel sparsity over {len(dataset)} images -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    model, extractor = _load_model(args)
    holder = ModelHolder(model, extractor)
    ui_dir = args.ui_dir if args.ui_dir and os.path.isdir(args.ui_dir) else None
    app = create_app(holder, max_side=args.max_side, ui_dir=ui_dir)
    print(f"serving {len(model.banks)} styles on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylebank",
        description="Multi-style stylization with per-style filter banks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the auto-encoder and style banks")
    p.add_argument("--content-dir", required=True, help="directory of .png content images")
    p.add_argument("--style", action="append", required=True, metavar="NAME=PATH",
                   help="style image (repeatable)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--c-max", type=int, default=32, help="encoder channel width")
    p.add_argument("--bank-kernel", type=int, default=3, choices=(3, 7))
    _add_train_flags(p, iters=300)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("add-style", help="train one new style against a frozen auto-encoder")
    p.add_argument("--model", help=f"input checkpoint (default ${MODEL_ENV})")
    p.add_argument("--style-image", required=True)
    p.add_argument("--name", help="style name (default: image filename stem)")
    p.add_argument("--content-dir", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    _add_train_flags(p, iters=200)
    p.set_defaults(fn=cmd_add_style)

    p = sub.add_parser("stylize", help="apply one style to an image")
    p.add_argument("--model", help=f"checkpoint (default ${MODEL_ENV})")
    p.add_argument("--style", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stylize)

    p = sub.add_parser("fuse", help="stylize with a weighted blend of banks")
    p.add_argument("--model", help=f"checkpoint (default ${MODEL_ENV})")
    p.add_argument("--weights", required=True, metavar="NAME=W,NAME=W")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("segment", help="k-means segmentation of encoder features")
    p.add_argument("--model", help=f"checkpoint (default ${MODEL_ENV})")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output label map PNG")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("fuse-regions", help="stylize regions of a label map differently")
    p.add_argument("--model", help=f"checkpoint (default ${MODEL_ENV})")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--labels", required=True, help="label map PNG")
    p.add_argument("--assign", required=True, metavar="LABEL=STYLE,...")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_fuse_regions)

    p = sub.add_parser("analyze", help="per-channel sparsity statistics CSV")
    p.add_argument("--model", help=f"checkpoint (default ${MODEL_ENV})")
    p.add_argument("--images", required=True, help="directory of .png images")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--model", help=f"checkpoint (default ${MODEL_ENV})")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--max-side", type=int, default=DEFAULT_MAX_SIDE)
    p.add_argument("--ui-dir", help="serve this directory at /ui")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError, checkpoint.CheckpointError) as err:
        detail = err.args[0] if err.args else err
        print(f"error: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
