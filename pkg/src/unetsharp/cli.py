"""Single executable: dataset synthesis, training, evaluation, pruning,
parameter accounting, graph export, and single-image inference."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .checkpoint import load_model, save_model
from .config import default_config, describe_defaults, load_config
from .data import Sample, load_dataset, make_batch, preprocess, synth_generate
from .errors import UnetSharpError
from .pruning import prune, pruned_inference
from .supervision import UNetSharp, inference_output, param_count
from .grid import build_grid, export_graph
from .tensor import no_grad
from .train import evaluate, split_dataset, train_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="unetsharp", description=__doc__)
    p.add_argument("--version", action="version", version=f"unetsharp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic blob dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--count", type=int, default=250)
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--empty-frac", type=float, default=0.3)
    synth.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    train.add_argument("--config", help="key=value config file (defaults apply if omitted)")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--mode", choices=("accurate", "fast"), default="accurate")
    ev.add_argument("--branch", help="full-resolution branch for fast mode, e.g. in_0_2 or de_0_4")
    ev.add_argument("--level", type=int, help="prune to this level before evaluating")
    ev.add_argument("--split", choices=("all", "val"), default="all",
                    help="evaluate everything or the validation share of the training split")
    ev.add_argument("--threshold", type=float, default=0.5)

    pr = sub.add_parser("prune", help="write a standalone pruned checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--level", type=int, required=True)
    pr.add_argument("--out", required=True)

    pa = sub.add_parser("params", help="report the learnable parameter count")
    pa.add_argument("--config")
    pa.add_argument("--level", type=int)
    pa.add_argument("--no-heads", action="store_true", help="exclude supervision heads")
    pa.add_argument("--no-cgm", action="store_true", help="exclude presence classifiers")

    gr = sub.add_parser("graph", help="export the node grid")
    gr.add_argument("--config")
    gr.add_argument("--format", choices=("dot", "json"), default="dot")

    inf = sub.add_parser("infer", help="segment one image into an 8-bit mask PNG")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--image", required=True)
    inf.add_argument("--out", required=True)
    inf.add_argument("--threshold", type=float, default=0.5)
    inf.add_argument("--mode", choices=("accurate", "fast"), default="accurate")
    inf.add_argument("--branch")

    sub.add_parser("defaults", help="print every config key with default and doc")
    return p


def _load_run_config(path):
    return load_config(path) if path else default_config()


def cmd_synth(args) -> int:
    out = synth_generate(args.out, args.count, args.size, args.empty_frac, args.seed)
    print(f"wrote {args.count} samples under {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    dataset = load_dataset(args.data)
    sample = dataset[0]
    if sample.image.shape[0] != cfg.arch.input_channels or sample.image.shape[1] != cfg.arch.input_size:
        raise UnetSharpError(
            f"dataset samples are {sample.image.shape}, config expects "
            f"[{cfg.arch.input_channels}, {cfg.arch.input_size}, {cfg.arch.input_size}]"
        )
    model = UNetSharp(cfg.arch, cgm=cfg.train.cgm, seed=cfg.train.seed)
    result = train_model(model, dataset, cfg.train, loss_weights=cfg.loss,
                         out_dir=args.out, run_meta=cfg.to_dict())
    print(f"best validation IoU {result.best_val_iou:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return 0


def _eval_dataset(args, meta):
    dataset = load_dataset(args.data)
    if args.split == "val":
        run = (meta or {}).get("run") or {}
        tr = run.get("train") or {}
        _, dataset = split_dataset(dataset, tr.get("val_fraction", 0.2), tr.get("seed", 0))
    return dataset


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    if args.level is not None:
        model = prune(model, args.level)
    dataset = _eval_dataset(args, meta)
    mode, branch = args.mode, args.branch
    if mode == "fast" and branch is None:
        raise UnetSharpError("fast mode needs --branch (a full-resolution branch name)")
    report = evaluate(model, dataset, mode=mode, branch=branch, threshold=args.threshold)
    summary = {
        "checkpoint": str(args.checkpoint),
        "mode": mode,
        "branch": branch,
        "level": args.level,
        "samples": len(report["samples"]),
        "iou": report["iou"],
        "dice": report["dice"],
    }
    if "cgm_accuracy" in report:
        summary["cgm_accuracy"] = report["cgm_accuracy"]
    print(f"IoU  {report['iou']:.4f}")
    print(f"Dice {report['dice']:.4f}")
    print(json.dumps(summary))
    return 0


def cmd_prune(args) -> int:
    model, meta = load_model(args.checkpoint)
    pruned = prune(model, args.level)
    run_meta = (meta or {}).get("run")
    save_model(args.out, pruned, meta=run_meta)
    print(f"wrote level-{args.level} checkpoint with {pruned.params.learnable_count()} "
          f"learnable parameters to {args.out}")
    return 0


def cmd_params(args) -> int:
    cfg = _load_run_config(args.config)
    count = param_count(
        cfg.arch,
        level=args.level,
        include_heads=not args.no_heads,
        include_cgm=not args.no_cgm,
    )
    label = f"L{args.level}" if args.level is not None else "full"
    print(f"{label}: {count} learnable parameters ({count / 1e6:.2f}M)")
    return 0


def cmd_graph(args) -> int:
    cfg = _load_run_config(args.config)
    print(export_graph(build_grid(cfg.arch), args.format))
    return 0


def cmd_infer(args) -> int:
    model, _ = load_model(args.checkpoint)
    arr = np.asarray(Image.open(args.image))
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    image = arr.astype(np.float32) / 255.0
    cfg = model.config
    if image.shape[0] != cfg.input_channels or image.shape[1:] != (cfg.input_size, cfg.input_size):
        raise UnetSharpError(
            f"image is {image.shape}, checkpoint expects "
            f"[{cfg.input_channels}, {cfg.input_size}, {cfg.input_size}]"
        )
    placeholder = np.zeros((1,) + image.shape[1:], dtype=np.float32)
    batch = make_batch([preprocess(Sample(image, placeholder, 0.0, Path(args.image).stem))])
    with no_grad():
        if args.mode == "fast" or args.branch:
            branch = args.branch
            if branch is None:
                raise UnetSharpError("fast mode needs --branch")
            outputs = model.forward_branches(batch.images, mode="eval")
            prob = inference_output(outputs, mode="fast", branch=branch)
        elif len([b for b in model.branches if b.family == "in"]) < model.config.depth - 1:
            prob = pruned_inference(model, batch.images)  # pruned checkpoints predict from their top branch
        else:
            outputs = model.forward_branches(batch.images, mode="eval")
            prob = inference_output(outputs, mode="accurate")
    mask = (prob.data[0, 0] >= args.threshold).astype(np.uint8) * 255
    Image.fromarray(mask, mode="L").save(args.out)
    positives = int(np.count_nonzero(mask))
    print(f"wrote {args.out} ({positives} positive pixels at threshold {args.threshold})")
    return 0


def cmd_defaults(_args) -> int:
    print(describe_defaults())
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "prune": cmd_prune,
    "params": cmd_params,
    "graph": cmd_graph,
    "infer": cmd_infer,
    "defaults": cmd_defaults,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UnetSharpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
