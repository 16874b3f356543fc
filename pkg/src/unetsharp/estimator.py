"""Scikit-learn style estimator facade over the segmentation model.

`UNetSharpSegmenter` follows the fit/predict contract (get_params/set_params
via BaseEstimator), so the model slots into sklearn pipelines, clones, and
model selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Dataset, Sample, make_batch, preprocess
from .grid import ArchConfig
from .losses import LossWeights
from .metrics import iou
from .supervision import UNetSharp, inference_output
from .tensor import Tensor, no_grad
from .train import TrainConfig, train_model
from .validation import check_grid_input, ensure_image_batch, ensure_mask_batch


class UNetSharpSegmenter(BaseEstimator):
    """Binary segmenter with deep supervision, presence gating, and the
    accurate/fast inference modes.

    Parameters mirror the run configuration; `fit` expects images
    [N, C, H, W] (or [N, H, W]) with binary masks of the same extent.
    """

    def __init__(
        self,
        channels=(8, 16, 32, 64, 128),
        convs_per_node=2,
        upsample_mode="bilinear",
        epochs=30,
        batch_size=8,
        lr0=1e-3,
        weight_decay=1e-4,
        seed=0,
        deep_supervision=True,
        cgm=True,
        augment=True,
        threshold=0.5,
        val_fraction=0.2,
        inference_mode="accurate",
    ):
        self.channels = channels
        self.convs_per_node = convs_per_node
        self.upsample_mode = upsample_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.weight_decay = weight_decay
        self.seed = seed
        self.deep_supervision = deep_supervision
        self.cgm = cgm
        self.augment = augment
        self.threshold = threshold
        self.val_fraction = val_fraction
        self.inference_mode = inference_mode

    def _dataset(self, X, y) -> tuple[Dataset, int, int]:
        images = ensure_image_batch(X)
        masks = ensure_mask_batch(y, images)
        n, c, h, w = images.shape
        check_grid_input(h, w, len(self.channels))
        samples = [
            Sample(images[i], masks[i], float(masks[i].max() > 0), f"{i:05d}")
            for i in range(n)
        ]
        return Dataset(samples), c, h

    def fit(self, X, y):
        dataset, in_channels, size = self._dataset(X, y)
        arch = ArchConfig(
            depth=len(self.channels),
            channels=tuple(self.channels),
            convs_per_node=self.convs_per_node,
            upsample_mode=self.upsample_mode,
            input_channels=in_channels,
            input_size=size,
        )
        tcfg = TrainConfig(
            lr0=self.lr0,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            augment=self.augment,
            cgm=self.cgm,
            deep_supervision=self.deep_supervision,
            val_fraction=self.val_fraction,
        )
        self.model_ = UNetSharp(arch, cgm=self.cgm, seed=self.seed)
        result = train_model(self.model_, dataset, tcfg, loss_weights=LossWeights())
        self.history_ = result.history
        self.best_val_iou_ = result.best_val_iou
        self.input_size_ = size
        self.n_channels_in_ = in_channels
        return self

    def _require_fitted(self) -> UNetSharp:
        if not hasattr(self, "model_"):
            raise NotFittedError("this UNetSharpSegmenter instance is not fitted yet")
        return self.model_

    def predict_proba(self, X) -> np.ndarray:
        """Gated probability maps, [N, 1, H, W]."""
        model = self._require_fitted()
        images = ensure_image_batch(X)
        if images.shape[1] != self.n_channels_in_ or images.shape[2] != self.input_size_:
            raise ValueError(
                f"expected [{self.n_channels_in_}, {self.input_size_}, {self.input_size_}] inputs "
                f"like the fit data, got {images.shape[1:]}"
            )
        mode = self.inference_mode
        branch = None
        if not self.deep_supervision and mode == "accurate":
            mode, branch = "fast", _output_branch_name(model)
        probs = []
        with no_grad():
            for start in range(0, images.shape[0], self.batch_size):
                chunk = images[start : start + self.batch_size]
                batch = make_batch(
                    [preprocess(Sample(img, np.zeros((1,) + img.shape[1:], np.float32), 0.0, "x"))
                     for img in chunk]
                )
                outputs = model.forward_branches(batch.images, mode="eval")
                probs.append(inference_output(outputs, mode=mode, branch=branch).data)
        return np.concatenate(probs, axis=0)

    def predict(self, X) -> np.ndarray:
        """Binary masks at the configured threshold, [N, 1, H, W] float {0,1}."""
        return (self.predict_proba(X) >= self.threshold).astype(np.float32)

    def score(self, X, y) -> float:
        """Mean IoU against reference masks (higher is better)."""
        images = ensure_image_batch(X)
        masks = ensure_mask_batch(y, images)
        pred = self.predict_proba(X)
        return float(np.mean([iou(pred[i, 0], masks[i, 0], self.threshold) for i in range(len(pred))]))


def _output_branch_name(model: UNetSharp) -> str:
    from .grid import node_name

    return node_name((0, model.config.depth - 1), model.config.depth)
