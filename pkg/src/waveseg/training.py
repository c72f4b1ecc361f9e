"""Losses, SGD with momentum, the step-decay schedule, and the train loop.

The bootstrapped cross-entropy averages, per image, only the K hardest
pixels (highest per-pixel loss); gradients flow through those pixels alone.
Ties at the K-th loss value are all included, so the selection can exceed K.
When ``k_reference_area`` is set, K is rescaled by the ratio of the actual
image area to that reference so the selected fraction stays constant across
scales.

The optimizer is classic heavy-ball momentum (v <- m*v + g; p <- p - lr*v)
with Nesterov as an option, and the learning rate decays by a fixed factor
every fixed number of epochs. Training is deterministic given the seed:
initialization, shuffling, and batch assembly all derive from it.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .errors import ConfigError, ContractError, DataError, DivergenceError, ShapeError
from .models import ModelConfig, NetworkGraph, build_model
from .tensor import Tape, Tensor4, backward, record


@dataclass
class LossConfig:
    kind: str = "ce"
    k_pixels: int = 8192
    ignore_label: Optional[int] = None
    k_reference_area: Optional[tuple[int, int]] = (512, 1024)

    def __post_init__(self):
        if self.kind not in ("ce", "bootstrap_ce"):
            raise ConfigError(f"LossConfig.kind must be 'ce' or 'bootstrap_ce'; got {self.kind!r}")
        if self.k_pixels < 1:
            raise ConfigError(f"LossConfig.k_pixels must be positive; got {self.k_pixels}")

    def effective_k(self, h: int, w: int) -> int:
        """K scaled to the image area when a reference area is configured."""
        if self.k_reference_area is None:
            return self.k_pixels
        ref_h, ref_w = self.k_reference_area
        return max(1, round(self.k_pixels * (h * w) / (ref_h * ref_w)))


@dataclass
class OptimConfig:
    lr0: float = 0.001
    momentum: float = 0.9
    decay_factor: float = 0.9
    decay_every_epochs: int = 10
    batch_size: int = 4
    nesterov: bool = False

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive; got {self.lr0}")
        if not 0 < self.momentum <= 1:
            raise ConfigError(f"momentum must lie in (0, 1]; got {self.momentum}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must lie in (0, 1]; got {self.decay_factor}")
        if self.decay_every_epochs < 1 or self.batch_size < 1:
            raise ConfigError("decay_every_epochs and batch_size must be positive integers")


def _check_loss_inputs(op: str, logits: Tensor4, labels: np.ndarray, cfg: LossConfig) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 3 or labels.shape != (logits.n, logits.h, logits.w):
        raise ShapeError(f"{op}: labels shape {labels.shape} != logits (n, h, w) {(logits.n, logits.h, logits.w)}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"{op}: labels must be integers; got dtype {labels.dtype}")
    bad = (labels < 0) | (labels >= logits.c)
    if cfg.ignore_label is not None:
        bad &= labels != cfg.ignore_label
    if bad.any():
        n, i, j = (int(v) for v in np.argwhere(bad)[0])
        raise DataError(
            f"{op}: label {int(labels[n, i, j])} out of range [0, {logits.c}) at image {n}, pixel ({i}, {j})"
        )
    return labels


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def _pixel_nll(logits: Tensor4, labels: np.ndarray):
    """Per-pixel negative log likelihood plus softmax probs for the backward."""
    logp = _log_softmax(logits.data)
    gather = np.take_along_axis(logp, np.clip(labels, 0, logits.c - 1)[:, None], axis=1)[:, 0]
    return -gather, np.exp(logp)


def cross_entropy(logits: Tensor4, labels: np.ndarray, cfg: Optional[LossConfig] = None) -> Tensor4:
    """Mean over non-ignored pixels of -log softmax(logits)[label]."""
    cfg = cfg if cfg is not None else LossConfig()
    labels = _check_loss_inputs("cross_entropy", logits, labels, cfg)
    nll, probs = _pixel_nll(logits, labels)
    mask = np.ones(labels.shape, dtype=bool) if cfg.ignore_label is None else labels != cfg.ignore_label
    count = int(mask.sum())
    if count == 0:
        raise DataError("cross_entropy: every pixel is ignored; nothing to average")
    value = float(nll[mask].sum()) / count
    out = Tensor4(np.full((1, 1, 1, 1), value, dtype=logits.data.dtype))

    def vjp(out_grads):
        (gy,) = out_grads
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, np.clip(labels, 0, logits.c - 1)[:, None], 1.0, axis=1)
        g = (probs - onehot) * mask[:, None].astype(probs.dtype) / count
        return (g * gy.reshape(()),)

    record("cross_entropy", (logits,), (out,), vjp)
    return out


def bootstrap_ce(logits: Tensor4, labels: np.ndarray, cfg: Optional[LossConfig] = None) -> Tensor4:
    """Per image, average the per-pixel loss over only the hardest pixels.

    With K >= pixel count this degenerates to plain cross-entropy.
    """
    cfg = cfg if cfg is not None else LossConfig(kind="bootstrap_ce")
    labels = _check_loss_inputs("bootstrap_ce", logits, labels, cfg)
    n, c, h, w = logits.dims
    k = cfg.effective_k(h, w)
    nll, probs = _pixel_nll(logits, labels)
    valid = np.ones(labels.shape, dtype=bool) if cfg.ignore_label is None else labels != cfg.ignore_label
    selected = np.zeros(labels.shape, dtype=bool)
    weights = np.zeros(n, dtype=logits.data.dtype)
    total, images = 0.0, 0
    for i in range(n):
        losses = nll[i][valid[i]]
        if losses.size == 0:
            continue
        if losses.size > k:
            threshold = np.partition(losses, losses.size - k)[losses.size - k]
            pick = valid[i] & (nll[i] >= threshold)
        else:
            pick = valid[i]
        selected[i] = pick
        m = int(pick.sum())
        weights[i] = 1.0 / m
        total += float(nll[i][pick].sum()) / m
        images += 1
    if images == 0:
        raise DataError("bootstrap_ce: every pixel of every image is ignored")
    value = total / images
    out = Tensor4(np.full((1, 1, 1, 1), value, dtype=logits.data.dtype))

    def vjp(out_grads):
        (gy,) = out_grads
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, np.clip(labels, 0, logits.c - 1)[:, None], 1.0, axis=1)
        pixw = selected.astype(probs.dtype) * (weights / images)[:, None, None]
        g = (probs - onehot) * pixw[:, None]
        return (g * gy.reshape(()),)

    record("bootstrap_ce", (logits,), (out,), vjp)
    return out


def compute_loss(logits: Tensor4, labels: np.ndarray, cfg: LossConfig) -> Tensor4:
    return bootstrap_ce(logits, labels, cfg) if cfg.kind == "bootstrap_ce" else cross_entropy(logits, labels, cfg)


def sgd_momentum_step(
    params: Sequence[Tensor4],
    grads: dict[int, np.ndarray],
    state: dict[int, np.ndarray],
    lr: float,
    momentum: float,
    nesterov: bool = False,
) -> None:
    """One in-place heavy-ball update: v <- m*v + g; p <- p - lr*v."""
    for p in params:
        g = grads.get(p.tid)
        if g is None:
            raise ContractError(f"sgd_momentum_step: no gradient for parameter with dims {p.dims}")
        if g.shape != p.dims:
            raise ContractError(f"sgd_momentum_step: gradient shape {g.shape} != parameter dims {p.dims}")
        v = state.get(p.tid)
        if v is None:
            v = np.zeros_like(p.data)
            state[p.tid] = v
        v *= momentum
        v += g
        if nesterov:
            p.data -= lr * (g + momentum * v)
        else:
            p.data -= lr * v


def lr_at(epoch: int, cfg: OptimConfig) -> float:
    """lr0 * decay_factor ** floor(epoch / decay_every_epochs); non-increasing."""
    if epoch < 0:
        raise ContractError(f"lr_at: epoch must be >= 0; got {epoch}")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every_epochs)


@dataclass
class TrainResult:
    graph: NetworkGraph
    checkpoint_path: Optional[Path]
    metrics: list[dict] = field(default_factory=list)
    final_val_miou: Optional[float] = None
    iterations: int = 0


def _stack_batch(samples, dtype: str) -> tuple[Tensor4, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.stack([s.labels for s in samples])
    return Tensor4(images, dtype=dtype), labels


def train(
    model_cfg: ModelConfig,
    optim_cfg: OptimConfig,
    loss_cfg: LossConfig,
    dataset,
    epochs: int,
    seed: int = 0,
    *,
    val_dataset=None,
    out_dir=None,
    max_iterations: Optional[int] = None,
    checkpoint_every: Optional[int] = None,
    val_every: int = 1,
    stop_miou: Optional[float] = None,
    log_every: int = 1,
    verbose: bool = False,
) -> TrainResult:
    """Run the full loop: shuffle, forward, backward, step, log, checkpoint.

    Deterministic for a fixed seed; aborts with DivergenceError on a
    non-finite loss after writing the current (still finite) parameters.
    """
    if not dataset:
        raise DataError("train: dataset is empty")
    from .evaluation import evaluate  # local import to avoid a cycle

    seq = np.random.SeedSequence([seed, 0x7A31])
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    graph = build_model(model_cfg, rng=init_rng)
    params = graph.parameters()
    state: dict[int, np.ndarray] = {}
    metrics: list[dict] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "a")

    def log(rec: dict) -> None:
        metrics.append(rec)
        if log_fh is not None:
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()

    def write_checkpoint(name: str) -> Path:
        path = out_dir / name
        save_checkpoint(path, graph.state_dict(), meta={"variant": model_cfg.variant, "seed": seed})
        return path

    iteration = 0
    last_val = None
    ckpt_path = None
    start = time.time()
    try:
        stop = False
        for epoch in range(epochs):
            lr = lr_at(epoch, optim_cfg)
            order = shuffle_rng.permutation(len(dataset))
            for lo in range(0, len(order), optim_cfg.batch_size):
                batch = [dataset[i] for i in order[lo : lo + optim_cfg.batch_size]]
                xb, yb = _stack_batch(batch, model_cfg.dtype)
                with Tape() as tape:
                    tape.watch_all(params)
                    logits = graph.forward(xb, training=True)
                    loss = compute_loss(logits, yb, loss_cfg)
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    abort_path = write_checkpoint("checkpoint_abort.bin") if out_dir is not None else None
                    raise DivergenceError(
                        f"training diverged: loss {loss_value} at iteration {iteration}",
                        last_checkpoint=abort_path,
                    )
                grads = backward(tape, loss)
                sgd_momentum_step(params, grads, state, lr, optim_cfg.momentum, optim_cfg.nesterov)
                iteration += 1
                if iteration % log_every == 0:
                    log({"iteration": iteration, "epoch": epoch, "lr": lr, "loss": loss_value})
                if max_iterations is not None and iteration >= max_iterations:
                    stop = True
                    break
            if val_dataset and ((epoch + 1) % val_every == 0 or stop or epoch == epochs - 1):
                report = evaluate(graph, val_dataset, num_classes=model_cfg.num_classes,
                                  ignore_label=loss_cfg.ignore_label, batch_size=optim_cfg.batch_size)
                last_val = report.mean_iou
                log({"iteration": iteration, "epoch": epoch, "lr": lr, "val_miou": last_val})
                if verbose:
                    print(f"epoch {epoch}: iter {iteration}, val mIoU {last_val:.4f} "
                          f"({time.time() - start:.1f}s)")
                if stop_miou is not None and last_val >= stop_miou:
                    stop = True
            if checkpoint_every is not None and out_dir is not None and (epoch + 1) % checkpoint_every == 0:
                write_checkpoint(f"checkpoint_epoch_{epoch + 1:04d}.bin")
            if stop:
                break
        if out_dir is not None:
            ckpt_path = write_checkpoint("checkpoint_final.bin")
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(graph=graph, checkpoint_path=ckpt_path, metrics=metrics,
                       final_val_miou=last_val, iterations=iteration)
