"""Confusion-matrix IoU evaluation, multi-scale test-time augmentation, and
prediction export.

IoU per class is TP / (TP + FP + FN) from a C x C confusion matrix (rows =
ground truth, columns = prediction); classes whose denominator is zero are
excluded from the mean. Accumulation is a plain integer sum, so it is
order-independent and merges associatively.

Multi-scale inference resizes the input bilinearly per scale (target dims
rounded to the nearest multiple the network accepts), averages the softmax
probabilities after resizing them back, and takes the argmax of the fused
scores. A single scale of 1.0 is exactly plain inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import ops
from .data import SegmentationSample
from .errors import ConfigError, DataError, ShapeError
from .models import NetworkGraph
from .tensor import Tensor4


class ConfusionMatrix:
    """C x C pixel counts; rows index ground truth, columns prediction."""

    def __init__(self, num_classes: int, counts: Optional[np.ndarray] = None):
        if num_classes < 1:
            raise ConfigError(f"ConfusionMatrix: num_classes must be positive; got {num_classes}")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        if counts.shape != (num_classes, num_classes):
            raise ShapeError(f"ConfusionMatrix: counts shape {counts.shape} != ({num_classes}, {num_classes})")
        self.counts = counts.astype(np.int64)

    def update(self, truth: np.ndarray, prediction: np.ndarray, ignore_label: Optional[int] = None) -> None:
        truth = np.asarray(truth).ravel()
        prediction = np.asarray(prediction).ravel()
        if truth.shape != prediction.shape:
            raise ShapeError(f"ConfusionMatrix.update: truth size {truth.shape} != prediction size {prediction.shape}")
        mask = np.ones(truth.shape, dtype=bool) if ignore_label is None else truth != ignore_label
        t, p = truth[mask], prediction[mask]
        if ((t < 0) | (t >= self.num_classes)).any():
            raise DataError(f"ConfusionMatrix.update: ground-truth id outside [0, {self.num_classes})")
        if ((p < 0) | (p >= self.num_classes)).any():
            raise DataError(f"ConfusionMatrix.update: prediction id outside [0, {self.num_classes})")
        flat = np.bincount(t * self.num_classes + p, minlength=self.num_classes**2)
        self.counts += flat.reshape(self.num_classes, self.num_classes)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("ConfusionMatrix.merge: class counts differ")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def iou_scores(conf: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where undefined) and the mean over defined classes."""
    counts = conf.counts
    if counts.sum() == 0:
        raise DataError("iou_scores: confusion matrix is all zeros; the score is undefined")
    tp = np.diag(counts).astype(np.float64)
    fn = counts.sum(axis=1) - tp
    fp = counts.sum(axis=0) - tp
    denom = tp + fp + fn
    per_class = np.full(conf.num_classes, np.nan)
    defined = denom > 0
    per_class[defined] = tp[defined] / denom[defined]
    return per_class, float(per_class[defined].mean())


def class_frequency(dataset: Sequence[SegmentationSample], num_classes: int,
                    ignore_label: Optional[int] = None) -> np.ndarray:
    """Fraction of non-ignored pixels carrying each class id; sums to 1."""
    if not dataset:
        raise DataError("class_frequency: dataset is empty")
    counts = np.zeros(num_classes, dtype=np.int64)
    for s in dataset:
        lbl = s.labels.ravel()
        if ignore_label is not None:
            lbl = lbl[lbl != ignore_label]
        if ((lbl < 0) | (lbl >= num_classes)).any():
            raise DataError(f"class_frequency: sample {s.name!r} has an out-of-range class id")
        counts += np.bincount(lbl, minlength=num_classes)
    total = counts.sum()
    if total == 0:
        raise DataError("class_frequency: every pixel is ignored")
    return counts / total


def _to_batch(image: np.ndarray, dtype: str) -> Tensor4:
    return Tensor4(image[None], dtype=dtype)


def predict_probs(graph: NetworkGraph, batch: Tensor4) -> np.ndarray:
    """Softmax class scores for a batch, shape (n, C, h, w)."""
    return ops.softmax_channels(graph.forward(batch)).data


def _round_to_multiple(value: float, multiple: int) -> int:
    return max(multiple, int(np.floor(value / multiple + 0.5)) * multiple)


def ms_tta_predict(graph: NetworkGraph, image: np.ndarray, scales: Sequence[float]) -> np.ndarray:
    """Fused class scores (C, h, w) from inference at several input scales.

    Per scale the image is resized bilinearly (half-pixel centers) to the
    nearest dims the network accepts, pushed through the network, softmaxed,
    resized back, and the scores are fused by arithmetic mean.
    """
    if not scales:
        raise ConfigError("ms_tta_predict: need at least one scale")
    div = graph.config.entry_divisor()
    _, h, w = image.shape
    fused = None
    for s in scales:
        if s <= 0:
            raise ConfigError(f"ms_tta_predict: scale {s} must be positive")
        if round(h * s / 32) < 1 or round(w * s / 32) < 1:
            raise ConfigError(f"ms_tta_predict: scale {s} shrinks {h}x{w} below 32x32")
        th, tw = _round_to_multiple(h * s, div), _round_to_multiple(w * s, div)
        x = _to_batch(image, graph.config.dtype)
        if (th, tw) != (h, w):
            x = ops.bilinear_resize(x, th, tw)
        probs = ops.softmax_channels(graph.forward(x))
        if (th, tw) != (h, w):
            probs = ops.bilinear_resize(probs, h, w)
        fused = probs.data[0] if fused is None else fused + probs.data[0]
    return fused / len(scales)


@dataclass
class EvalReport:
    """Per-class and mean IoU, optionally with a multi-scale counterpart."""

    num_classes: int
    per_class: np.ndarray
    mean_iou: float
    ms_per_class: Optional[np.ndarray] = None
    ms_mean_iou: Optional[float] = None
    class_names: Optional[list[str]] = None

    def to_text(self) -> str:
        names = self.class_names or [f"class_{c}" for c in range(self.num_classes)]
        width = max(len(n) for n in names + ["mean"]) + 2
        has_ms = self.ms_per_class is not None
        header = f"{'class':<{width}}{'iou':>8}" + ("{:>10}".format("iou_ms") if has_ms else "")
        lines = [header, "-" * len(header)]
        for c, name in enumerate(names):
            v = self.per_class[c]
            cell = f"{v:8.4f}" if np.isfinite(v) else f"{'-':>8}"
            if has_ms:
                m = self.ms_per_class[c]
                cell += f"{m:10.4f}" if np.isfinite(m) else f"{'-':>10}"
            lines.append(f"{name:<{width}}" + cell)
        lines.append("-" * len(header))
        summary = f"{'mean':<{width}}{self.mean_iou:8.4f}"
        if has_ms:
            summary += f"{self.ms_mean_iou:10.4f}"
        lines.append(summary)
        return "\n".join(lines) + "\n"

    def to_records(self) -> list[dict]:
        names = self.class_names or [f"class_{c}" for c in range(self.num_classes)]
        recs = []
        for c, name in enumerate(names):
            rec = {"class": name, "iou": None if not np.isfinite(self.per_class[c]) else float(self.per_class[c])}
            if self.ms_per_class is not None:
                rec["iou_ms"] = None if not np.isfinite(self.ms_per_class[c]) else float(self.ms_per_class[c])
            recs.append(rec)
        rec = {"class": "mean", "iou": float(self.mean_iou)}
        if self.ms_mean_iou is not None:
            rec["iou_ms"] = float(self.ms_mean_iou)
        recs.append(rec)
        return recs


def evaluate(
    graph: NetworkGraph,
    dataset: Sequence[SegmentationSample],
    num_classes: Optional[int] = None,
    scales: Optional[Sequence[float]] = None,
    ignore_label: Optional[int] = None,
    batch_size: int = 4,
    class_names: Optional[list[str]] = None,
) -> EvalReport:
    """Accumulate a confusion matrix over the split and report IoU scores.

    When ``scales`` is given, a multi-scale pass is reported alongside the
    plain one. Samples sharing dims are batched for the plain pass.
    """
    if not dataset:
        raise DataError("evaluate: dataset is empty")
    C = num_classes if num_classes is not None else graph.config.num_classes
    conf = ConfusionMatrix(C)
    dtype = graph.config.dtype
    for lo in range(0, len(dataset), batch_size):
        chunk = list(dataset[lo : lo + batch_size])
        dims = {s.image.shape for s in chunk}
        groups = [chunk] if len(dims) == 1 else [[s] for s in chunk]
        for group in groups:
            batch = Tensor4(np.stack([s.image for s in group]), dtype=dtype)
            probs = predict_probs(graph, batch)
            preds = probs.argmax(axis=1)
            for s, p in zip(group, preds):
                conf.update(s.labels, p, ignore_label)
    per_class, mean = iou_scores(conf)
    report = EvalReport(C, per_class, mean, class_names=class_names)
    if scales:
        conf_ms = ConfusionMatrix(C)
        for s in dataset:
            fused = ms_tta_predict(graph, s.image, scales)
            conf_ms.update(s.labels, fused.argmax(axis=0), ignore_label)
        report.ms_per_class, report.ms_mean_iou = iou_scores(conf_ms)
    return report


def export_colormap(prediction: np.ndarray, palette: Sequence[tuple[int, int, int]], path,
                    ignore_label: Optional[int] = None) -> None:
    """Write an (h, w) class-id map as an 8-bit color PNG.

    Palette entry ``c`` colors class ``c`` bit-exactly; ignore pixels render
    black. Ids beyond the palette are an error.
    """
    prediction = np.asarray(prediction)
    if prediction.ndim != 2:
        raise ShapeError(f"export_colormap: prediction must be 2-D; got shape {prediction.shape}")
    mask = np.ones(prediction.shape, dtype=bool)
    if ignore_label is not None:
        mask = prediction != ignore_label
    if (prediction[mask] < 0).any() or (prediction[mask] >= len(palette)).any():
        raise DataError(f"export_colormap: class id outside [0, {len(palette)})")
    table = np.asarray(palette, dtype=np.uint8)
    rgb = table[np.where(mask, prediction, 0)]
    rgb[~mask] = 0
    Image.fromarray(rgb, mode="RGB").save(Path(path))
