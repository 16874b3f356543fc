"""Training and evaluation loops: Adam with cosine-annealed learning rate,
per-epoch validation, best-checkpoint retention, JSONL metrics stream."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np

from . import metrics
from .data import Dataset, Sample, augment, make_batch, preprocess
from .errors import ConfigError
from .grid import node_name
from .losses import LossWeights
from .optim import Adam, cosine_lr
from .supervision import BranchOutputs, UNetSharp, inference_output, supervised_loss
from .tensor import Tensor, backward, no_grad


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    augment: bool = True
    cgm: bool = True
    deep_supervision: bool = True
    cgm_weight: float = 0.25
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")


@dataclasses.dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_iou: float
    best_params: dict[str, np.ndarray]
    metrics_path: Path | None = None
    checkpoint_path: Path | None = None


def split_dataset(dataset: Dataset, val_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic seeded-shuffle split; validation gets the tail."""
    idx = np.random.default_rng((seed, 0xD5)).permutation(len(dataset))
    n_val = max(1, int(round(len(dataset) * val_fraction)))
    if n_val >= len(dataset):
        raise ConfigError("dataset too small to split")
    val_idx = sorted(idx[:n_val].tolist())
    train_idx = sorted(idx[n_val:].tolist())
    return Dataset([dataset[i] for i in train_idx]), Dataset([dataset[i] for i in val_idx])


def _output_branch(model: UNetSharp) -> str:
    return node_name((0, model.config.depth - 1), model.config.depth)


def _restrict_outputs(outputs: BranchOutputs, name: str) -> BranchOutputs:
    spec = next(b for b in outputs.specs if b.name == name)
    return BranchOutputs(
        (spec,),
        {name: outputs.logits[name]},
        {name: outputs.cgm_probs[name]} if name in outputs.cgm_probs else {},
        {name: outputs.gates[name]},
    )


def _check_finite(report, epoch: int, step: int) -> None:
    for branch, rep in report.branches.items():
        if not math.isfinite(rep.total.item()):
            raise RuntimeError(
                f"non-finite loss in branch {branch} at epoch {epoch}, step {step}; aborting"
            )
    if not math.isfinite(report.total.item()):
        raise RuntimeError(f"non-finite total loss at epoch {epoch}, step {step}; aborting")


def train_model(
    model: UNetSharp,
    dataset: Dataset,
    config: TrainConfig,
    loss_weights: LossWeights | None = None,
    out_dir=None,
    run_meta: dict | None = None,
) -> TrainResult:
    """Run the full recipe; returns history and retains the best-validation
    checkpoint (the model is left holding the best parameters).

    Per-sample augmentation streams derive from (seed, epoch, sample index),
    so results do not depend on loader scheduling.
    """
    weights = loss_weights if loss_weights is not None else LossWeights()
    train_ds, val_ds = split_dataset(dataset, config.val_fraction, config.seed)
    optimizer = Adam(model.params, lr=config.lr0, weight_decay=config.weight_decay)
    eval_mode = "accurate" if config.deep_supervision else "fast"
    eval_branch = None if config.deep_supervision else _output_branch(model)

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_file = (out_path / "metrics.jsonl").open("w", encoding="utf-8")

    history: list[dict] = []
    best_iou, best_epoch, best_params = -1.0, -1, model.params.snapshot()
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            lr = cosine_lr(epoch, config.epochs, config.lr0)
            order = np.random.default_rng((config.seed, 1, epoch)).permutation(len(train_ds))
            total_sum = 0.0
            branch_sums: dict[str, float] = {}
            n_batches = 0
            for start in range(0, len(order), config.batch_size):
                chunk = order[start : start + config.batch_size]
                if len(chunk) == 1:
                    continue  # a singleton batch starves batch-norm statistics
                samples = []
                for di in chunk:
                    s = train_ds[int(di)]
                    rng = np.random.default_rng((config.seed, 2, epoch, int(di)))
                    samples.append(augment(s, rng) if config.augment else preprocess(s))
                batch = make_batch(samples)
                drop_rng = np.random.default_rng((config.seed, 3, epoch, n_batches))
                outputs = model.forward_branches(batch.images, mode="train", rng=drop_rng)
                if not config.deep_supervision:
                    outputs = _restrict_outputs(outputs, _output_branch(model))
                total, report = supervised_loss(
                    outputs, batch.masks, batch.presence, weights, cgm_weight=config.cgm_weight
                )
                _check_finite(report, epoch, n_batches)
                model.params.zero_grad()
                backward(total)
                optimizer.step(lr=lr)
                total_sum += total.item()
                for bname, rep in report.branches.items():
                    branch_sums[bname] = branch_sums.get(bname, 0.0) + rep.total.item()
                n_batches += 1

            val = evaluate(model, val_ds, mode=eval_mode, branch=eval_branch,
                           batch_size=config.batch_size)
            row: dict = {"epoch": epoch, "lr": lr}
            row["train_total"] = total_sum / max(n_batches, 1)
            for bname in sorted(branch_sums):
                row[bname] = branch_sums[bname] / max(n_batches, 1)
            row["val_iou"] = val["iou"]
            row["val_dice"] = val["dice"]
            row["seconds"] = time.perf_counter() - t0
            history.append(row)
            if metrics_file is not None:
                metrics_file.write(json.dumps(row) + "\n")
                metrics_file.flush()
            if val["iou"] > best_iou:
                best_iou, best_epoch, best_params = val["iou"], epoch, model.params.snapshot()
    finally:
        if metrics_file is not None:
            metrics_file.close()

    model.params.load_arrays(best_params)
    result = TrainResult(history, best_epoch, best_iou, best_params,
                         metrics_path=None if out_path is None else out_path / "metrics.jsonl")
    if out_path is not None:
        from .checkpoint import save_model

        result.checkpoint_path = out_path / "checkpoint.ushp"
        save_model(result.checkpoint_path, model, meta=run_meta)
    return result


def evaluate(
    model: UNetSharp,
    dataset: Dataset,
    mode: str = "accurate",
    branch: str | None = None,
    threshold: float = 0.5,
    batch_size: int = 8,
) -> dict:
    """Mean IoU/Dice of the requested inference mode over a dataset, plus
    per-sample records and presence-gate bookkeeping."""
    records = []
    gate_hits = 0
    gate_total = 0
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            samples = [preprocess(dataset[i]) for i in range(start, min(start + batch_size, len(dataset)))]
            batch = make_batch(samples)
            outputs = model.forward_branches(batch.images, mode="eval")
            prob = inference_output(outputs, mode=mode, branch=branch)
            in_names = [b.name for b in outputs.in_branches()] if mode == "accurate" else [branch]
            for bi, s in enumerate(samples):
                p = prob.data[bi, 0]
                m = s.mask[0]
                gates = {nm: float(outputs.gates[nm].data[bi]) for nm in in_names}
                for g in gates.values():
                    gate_hits += int(g == s.presence)
                    gate_total += 1
                records.append(
                    {
                        "id": s.id,
                        "iou": metrics.iou(p, m, threshold),
                        "dice": metrics.dice(p, m, threshold),
                        "presence": s.presence,
                        "gates": gates,
                        "positives": int(np.count_nonzero(p >= threshold)),
                    }
                )
    out = {
        "iou": float(np.mean([r["iou"] for r in records])),
        "dice": float(np.mean([r["dice"] for r in records])),
        "samples": records,
    }
    if model.cgm and gate_total:
        out["cgm_accuracy"] = gate_hits / gate_total
    return out
