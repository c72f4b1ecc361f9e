"""Scikit-learn style front end over the segmentation pipeline.

``WaveletSegmenter`` wraps model building, training, and inference behind the
usual fit/predict/score surface so it composes with sklearn tooling
(``get_params``/``set_params``/``clone`` come from ``BaseEstimator``).
Constructor arguments are stored verbatim; everything learned lives in
trailing-underscore attributes set by ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import SegmentationSample
from .errors import ShapeError
from .evaluation import ConfusionMatrix, evaluate, iou_scores, predict_probs
from .models import ModelConfig
from .tensor import Tensor4
from .training import LossConfig, OptimConfig, train
from .validation import check_image_array, check_label_array
from .wavelet import SubbandSet, dwt2_single, haar_filters, idwt2_single


class WaveletSegmenter(BaseEstimator):
    """Dense pixelwise classifier with wavelet unpooling and context pyramids.

    Parameters mirror the training configuration; the defaults give a
    sub-million-parameter desk-scale model. ``fit`` expects ``X`` of shape
    (n, 3, h, w) with values in [0, 1] and ``y`` of shape (n, h, w) holding
    integer class ids; ``predict`` returns (n, h, w) class-id maps and
    ``score`` the mean IoU over defined classes.
    """

    def __init__(
        self,
        variant: str = "wavelet_ffc",
        width_mult: float = 0.125,
        num_classes: int | None = None,
        blocks_per_stage: tuple = (1, 1, 1, 1),
        decoder_blocks: tuple = (1, 1, 1, 1, 1),
        pyramid_levels: int | None = None,
        batch_norm: bool = True,
        loss: str = "bootstrap_ce",
        k_pixels: int = 8192,
        ignore_label: int | None = None,
        epochs: int = 15,
        max_iterations: int | None = None,
        batch_size: int = 4,
        lr0: float = 0.001,
        momentum: float = 0.9,
        decay_factor: float = 0.9,
        decay_every_epochs: int = 10,
        seed: int = 0,
    ):
        self.variant = variant
        self.width_mult = width_mult
        self.num_classes = num_classes
        self.blocks_per_stage = blocks_per_stage
        self.decoder_blocks = decoder_blocks
        self.pyramid_levels = pyramid_levels
        self.batch_norm = batch_norm
        self.loss = loss
        self.k_pixels = k_pixels
        self.ignore_label = ignore_label
        self.epochs = epochs
        self.max_iterations = max_iterations
        self.batch_size = batch_size
        self.lr0 = lr0
        self.momentum = momentum
        self.decay_factor = decay_factor
        self.decay_every_epochs = decay_every_epochs
        self.seed = seed

    def _dataset(self, X: np.ndarray, y: np.ndarray) -> list[SegmentationSample]:
        return [
            SegmentationSample(image=X[i].astype(np.float32), labels=np.asarray(y[i], dtype=np.int32))
            for i in range(X.shape[0])
        ]

    def fit(self, X, y) -> "WaveletSegmenter":
        X = check_image_array(X)
        y = check_label_array(y, X, ignore_label=self.ignore_label)
        if self.num_classes is not None:
            n_classes = self.num_classes
        else:
            mask = np.ones(y.shape, dtype=bool) if self.ignore_label is None else y != self.ignore_label
            n_classes = int(y[mask].max()) + 1
        y = check_label_array(y, X, num_classes=n_classes, ignore_label=self.ignore_label)
        model_cfg = ModelConfig(
            variant=self.variant,
            num_classes=n_classes,
            input_dims=X.shape[2:],
            width_mult=self.width_mult,
            blocks_per_stage=tuple(self.blocks_per_stage),
            decoder_blocks=tuple(self.decoder_blocks),
            pyramid_levels=self.pyramid_levels,
            batch_norm=self.batch_norm,
        )
        optim_cfg = OptimConfig(
            lr0=self.lr0,
            momentum=self.momentum,
            decay_factor=self.decay_factor,
            decay_every_epochs=self.decay_every_epochs,
            batch_size=self.batch_size,
        )
        loss_cfg = LossConfig(kind=self.loss, k_pixels=self.k_pixels, ignore_label=self.ignore_label)
        result = train(
            model_cfg,
            optim_cfg,
            loss_cfg,
            self._dataset(X, y),
            epochs=self.epochs,
            seed=self.seed,
            max_iterations=self.max_iterations,
        )
        self.graph_ = result.graph
        self.model_config_ = model_cfg
        self.num_classes_ = n_classes
        self.classes_ = np.arange(n_classes)
        self.n_iterations_ = result.iterations
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "graph_"):
            raise NotFittedError("this WaveletSegmenter instance is not fitted yet; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel class probabilities, shape (n, num_classes, h, w)."""
        self._check_fitted()
        X = check_image_array(X)
        out = []
        for lo in range(0, X.shape[0], self.batch_size):
            batch = Tensor4(X[lo : lo + self.batch_size], dtype=self.graph_.config.dtype)
            out.append(predict_probs(self.graph_, batch))
        return np.concatenate(out, axis=0)

    def predict(self, X) -> np.ndarray:
        """Per-pixel class ids, shape (n, h, w)."""
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y) -> float:
        """Mean IoU of the predictions against ``y``."""
        self._check_fitted()
        X = check_image_array(X)
        y = check_label_array(y, X, num_classes=self.num_classes_, ignore_label=self.ignore_label)
        conf = ConfusionMatrix(self.num_classes_)
        preds = self.predict(X)
        for i in range(X.shape[0]):
            conf.update(y[i], preds[i], self.ignore_label)
        return iou_scores(conf)[1]

    def evaluate(self, X, y, scales=None):
        """Full IoU report (see :func:`waveseg.evaluation.evaluate`)."""
        self._check_fitted()
        X = check_image_array(X)
        y = check_label_array(y, X, num_classes=self.num_classes_, ignore_label=self.ignore_label)
        return evaluate(self.graph_, self._dataset(X, y), num_classes=self.num_classes_,
                        scales=scales, ignore_label=self.ignore_label, batch_size=self.batch_size)


class HaarWaveletTransform(BaseEstimator):
    """Stateless single-level 2-D Haar analysis as an sklearn transformer.

    ``transform`` maps (n, c, h, w) arrays (even h, w) to (n, 4c, h/2, w/2)
    with the ll, lh, hl, hh bands stacked along channels;
    ``inverse_transform`` reconstructs exactly. Stack several instances in a
    pipeline for a multi-level cascade.
    """

    def fit(self, X, y=None) -> "HaarWaveletTransform":
        return self

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4:
            raise ShapeError(f"expected (n, c, h, w); got shape {X.shape}")
        bands = dwt2_single(Tensor4(X), haar_filters())
        return np.concatenate([bands.y_ll.data, bands.y_lh.data, bands.y_hl.data, bands.y_hh.data], axis=1)

    def inverse_transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4 or X.shape[1] % 4:
            raise ShapeError(f"expected (n, 4c, h, w) subband stack; got shape {X.shape}")
        c = X.shape[1] // 4
        parts = [Tensor4(X[:, k * c : (k + 1) * c]) for k in range(4)]
        return idwt2_single(SubbandSet(*parts), haar_filters()).data
