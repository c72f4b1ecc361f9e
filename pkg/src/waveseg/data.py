"""Dataset ingestion, synthetic scene generation, and palette handling.

On-disk layout: ``{root}/{split}/images/*.png`` paired by filename stem with
``{root}/{split}/labels/*.png``. Images are 8-bit RGB, normalized to [0, 1]
on load; labels are single-channel 8-bit PNGs holding class ids directly,
with 255 conventionally reserved for ignore.

The synthetic generator paints colored geometric shapes (rectangles, disks,
striped bands) on a dark background; the label map is the painted class id.
Every class gets a distinct base color and images carry mild Gaussian noise,
so the task is learnable at desk scale yet boundary accuracy still matters.
Generation is bitwise deterministic per seed.
"""

from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class SegmentationSample:
    """One densely annotated image: (3, h, w) float image in [0, 1] plus an
    (h, w) integer class-id map."""

    image: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"sample {self.name!r}: image must be (3, h, w); got {self.image.shape}")
        if self.labels.shape != self.image.shape[1:]:
            raise DataError(
                f"sample {self.name!r}: labels {self.labels.shape} != image spatial dims {self.image.shape[1:]}"
            )


def load_dataset(root, split: str, num_classes: int, ignore_label: int | None = 255) -> list[SegmentationSample]:
    """Load paired, sorted, validated samples from ``root/split``.

    An empty or missing images directory yields an empty list (with a
    warning); unpaired files, size mismatches, and out-of-range label ids are
    hard errors naming the offending file.
    """
    base = Path(root) / split
    img_dir, lbl_dir = base / "images", base / "labels"
    if not img_dir.is_dir():
        logger.warning("dataset split %s has no images directory (%s); returning no samples", split, img_dir)
        return []
    images = sorted(img_dir.glob("*.png"))
    labels = {p.stem: p for p in lbl_dir.glob("*.png")} if lbl_dir.is_dir() else {}
    if not images:
        logger.warning("dataset split %s is empty (%s)", split, img_dir)
        return []
    extra = sorted(set(labels) - {p.stem for p in images})
    if extra:
        raise DataError(f"label file {labels[extra[0]]} has no matching image")
    samples = []
    for img_path in images:
        lbl_path = labels.get(img_path.stem)
        if lbl_path is None:
            raise DataError(f"image file {img_path} has no matching label")
        with Image.open(img_path) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255.0
        with Image.open(lbl_path) as lm:
            if lm.mode not in ("L", "P"):
                raise DataError(f"label file {lbl_path} must be 8-bit single-channel; got mode {lm.mode!r}")
            # P mode: the raw palette indices are the class ids
            lbl = np.asarray(lm, dtype=np.int32)
        if lbl.shape != image.shape[1:]:
            raise DataError(f"label file {lbl_path} has size {lbl.shape}, image is {image.shape[1:]}")
        bad = lbl >= num_classes
        if ignore_label is not None:
            bad &= lbl != ignore_label
        if bad.any():
            offending = int(lbl[bad][0])
            raise DataError(f"label file {lbl_path} contains class id {offending} >= num_classes ({num_classes})")
        samples.append(SegmentationSample(image=image, labels=lbl, name=img_path.stem))
    return samples


def save_dataset(samples: list[SegmentationSample], root, split: str) -> None:
    """Write samples in the on-disk layout that :func:`load_dataset` reads."""
    base = Path(root) / split
    (base / "images").mkdir(parents=True, exist_ok=True)
    (base / "labels").mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        name = s.name or f"sample_{i:05d}"
        img = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(img, mode="RGB").save(base / "images" / f"{name}.png")
        Image.fromarray(s.labels.astype(np.uint8), mode="L").save(base / "labels" / f"{name}.png")


def class_colors(num_classes: int) -> np.ndarray:
    """Deterministic, well-separated base color per class, background dark."""
    colors = [np.array([0.12, 0.12, 0.14])]
    for c in range(1, num_classes):
        hue = (c - 1) / max(1, num_classes - 1)
        colors.append(np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.85)))
    return np.stack(colors)


def synth_generate(seed: int, n: int, dims: tuple[int, int], num_classes: int) -> list[SegmentationSample]:
    """Generate ``n`` synthetic samples of shape classes on a noisy background.

    Class 0 is background; classes 1..num_classes-1 cycle through rectangle,
    disk, and striped-band shape kinds. The first shape of sample ``i`` has
    class 1 + (i % (num_classes - 1)), so any set of at least num_classes - 1
    samples covers every class.
    """
    if num_classes < 2:
        raise ConfigError(f"synth_generate: need at least 2 classes; got {num_classes}")
    h, w = dims
    if h % 32 or w % 32:
        raise ConfigError(f"synth_generate: dims {dims} must be multiples of 32")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    colors = class_colors(num_classes)
    yy, xx = np.mgrid[0:h, 0:w]
    samples = []
    for i in range(n):
        image = np.empty((3, h, w), dtype=np.float32)
        image[:] = colors[0][:, None, None]
        labels = np.zeros((h, w), dtype=np.int32)
        n_shapes = int(rng.integers(2, 5))
        for s in range(n_shapes):
            cls = 1 + (i % (num_classes - 1)) if s == 0 else int(rng.integers(1, num_classes))
            kind = (cls - 1) % 3
            cy, cx = int(rng.integers(h // 6, h - h // 6)), int(rng.integers(w // 6, w - w // 6))
            size = int(rng.integers(min(h, w) // 3, 2 * min(h, w) // 3))
            if kind == 0:
                mask = (np.abs(yy - cy) <= size // 2) & (np.abs(xx - cx) <= int(size * 0.7) // 2)
                fill = colors[cls][:, None, None].astype(np.float32)
            elif kind == 1:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= (size // 2) ** 2
                fill = colors[cls][:, None, None].astype(np.float32)
            else:
                half = max(6, size // 3)
                mask = np.abs(yy - cy) <= half
                tone = (0.6 + 0.4 * ((yy // 4) % 2)).astype(np.float32)
                fill = (colors[cls][:, None, None] * tone[None]).astype(np.float32)
            if not mask.any():
                continue
            image = np.where(mask[None], fill, image)
            labels[mask] = cls
        image += rng.normal(0.0, 0.02, size=image.shape).astype(np.float32)
        np.clip(image, 0.0, 1.0, out=image)
        samples.append(SegmentationSample(image=image.astype(np.float32), labels=labels, name=f"synth_{seed}_{i:05d}"))
    return samples


def default_palette(num_classes: int) -> list[tuple[int, int, int]]:
    """8-bit RGB rendering palette matching :func:`class_colors`."""
    return [tuple(int(round(v * 255)) for v in c) for c in class_colors(num_classes)]


def load_palette(path) -> list[tuple[int, int, int]]:
    """Read one hex color (#rrggbb) per class line; blank lines are skipped."""
    palette = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text:
            continue
        try:
            if not (text.startswith("#") and len(text) == 7):
                raise ValueError
            palette.append(tuple(int(text[k : k + 2], 16) for k in (1, 3, 5)))
        except ValueError:
            raise DataError(f"{path}:{lineno}: expected '#rrggbb'; got {text!r}")
    if not palette:
        raise DataError(f"{path}: palette file contains no colors")
    return palette


def save_palette(palette: list[tuple[int, int, int]], path) -> None:
    Path(path).write_text("".join(f"#{r:02x}{g:02x}{b:02x}\n" for r, g, b in palette))
