"""Grid-shaped encoder-decoder segmentation with dense and full-scale skip
connections, deep supervision, classification-guided gating, and pruning,
built on a self-contained numpy autodiff core."""

import os as _os

# honor the thread cap before any BLAS-backed import happens
_threads = _os.environ.get("UNETSHARP_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .tensor import Tensor, backward, grad_check, no_grad  # noqa: E402
from . import ops  # noqa: E402
from .params import ParamStore  # noqa: E402
from .errors import (  # noqa: E402
    CheckpointError,
    ConfigError,
    DataError,
    ShapeError,
    UnetSharpError,
)
from .grid import ArchConfig, ArchGraph, build_grid, export_graph, forward  # noqa: E402
from .losses import (  # noqa: E402
    LossReport,
    LossWeights,
    bce_loss,
    focal_loss,
    laplace_dice_loss,
    lovasz_hinge_loss,
    mixed_seg_loss,
)
from .supervision import (  # noqa: E402
    BranchOutputs,
    BranchSpec,
    UNetSharp,
    apply_gate,
    attach_heads,
    cgm_forward,
    downscale_gt,
    inference_output,
    param_count,
    supervised_loss,
)
from .pruning import isolated_model, prune, pruned_inference, train_isolated  # noqa: E402
from .data import (  # noqa: E402
    Dataset,
    Sample,
    SampleBatch,
    augment,
    load_dataset,
    make_batch,
    synth_generate,
)
from .metrics import dice, iou  # noqa: E402
from .optim import Adam, adam_step, cosine_lr, init_weights  # noqa: E402
from .train import TrainConfig, TrainResult, evaluate, split_dataset, train_model  # noqa: E402
from .checkpoint import load_arrays, load_model, save_arrays, save_model  # noqa: E402
from .config import RunConfig, default_config, load_config, parse_config  # noqa: E402
from .estimator import UNetSharpSegmenter  # noqa: E402

__all__ = [
    "Adam",
    "ArchConfig",
    "ArchGraph",
    "BranchOutputs",
    "BranchSpec",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Dataset",
    "LossReport",
    "LossWeights",
    "ParamStore",
    "RunConfig",
    "Sample",
    "SampleBatch",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "UNetSharp",
    "UNetSharpSegmenter",
    "UnetSharpError",
    "adam_step",
    "apply_gate",
    "attach_heads",
    "augment",
    "backward",
    "bce_loss",
    "build_grid",
    "cgm_forward",
    "cosine_lr",
    "default_config",
    "dice",
    "downscale_gt",
    "evaluate",
    "export_graph",
    "focal_loss",
    "forward",
    "grad_check",
    "inference_output",
    "init_weights",
    "iou",
    "isolated_model",
    "laplace_dice_loss",
    "load_arrays",
    "load_config",
    "load_dataset",
    "load_model",
    "lovasz_hinge_loss",
    "make_batch",
    "mixed_seg_loss",
    "no_grad",
    "ops",
    "param_count",
    "parse_config",
    "prune",
    "pruned_inference",
    "save_arrays",
    "save_model",
    "split_dataset",
    "supervised_loss",
    "synth_generate",
    "train_isolated",
    "train_model",
]
