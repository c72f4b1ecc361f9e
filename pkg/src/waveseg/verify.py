"""Runtime verification suites: the invariants the library is built on.

These checks are independent oracles, not re-statements of the
implementation: finite differences for gradients, direct inner products for
adjointness, naive pooling for the low-band equivalence, and config
arithmetic for the full-scale shape trace. ``run_all`` powers the CLI's
``verify`` subcommand; the pytest suite reuses the same helpers with larger
trial counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ops
from .layers import FfcPyramid, LfpPyramid, PyramidConfig, ResidualBlock, UnpoolInputs, UpconvBlock, wavelet_unpool
from .models import ModelConfig, shape_trace
from .ops import ConvParams
from .tensor import Tape, Tensor4, backward
from .training import LossConfig, bootstrap_ce, cross_entropy
from .wavelet import FilterPair, SubbandSet, dwt2_multi, dwt2_single, haar_filters, idwt2_multi, idwt2_single


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """Max-norm relative error with a floor to keep tiny oracles meaningful."""
    denom = max(float(np.abs(want).max(initial=0.0)), 1e-8)
    return float(np.abs(got - want).max(initial=0.0)) / denom


def gradient_check(build_loss: Callable[[list[Tensor4]], Tensor4], params: list[Tensor4],
                   step: float = 1e-5) -> float:
    """Worst relative error between tape gradients and finite differences."""
    with Tape() as tape:
        tape.watch_all(params)
        loss = build_loss(params)
    grads = backward(tape, loss)
    worst = 0.0
    for p in params:

        def f(_arr, _p=p):
            return build_loss(params).item()

        fd = finite_difference_gradient(f, p.data, step)
        worst = max(worst, relative_error(grads[p.tid], fd))
    return worst


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def check_perfect_reconstruction(filters: Optional[FilterPair] = None, trials: int = 20,
                                 seed: int = 11) -> CheckResult:
    f = filters if filters is not None else haar_filters()
    rng = np.random.default_rng(seed)
    start = time.time()
    worst64, worst32 = 0.0, 0.0
    for t in range(trials):
        levels = 1 + t % 4
        div = 2**levels
        h = div * int(rng.integers(1, 5))
        w = div * int(rng.integers(1, 5))
        x64 = Tensor4(rng.standard_normal((1 + t % 2, 1 + t % 3, h, w)), dtype="f64")
        rec64 = idwt2_multi(dwt2_multi(x64, levels, f), f)
        worst64 = max(worst64, float(np.abs(rec64.data - x64.data).max()))
        x32 = Tensor4(x64.data, dtype="f32")
        rec32 = idwt2_multi(dwt2_multi(x32, levels, f), f)
        scale = max(float(np.abs(x32.data).max()), 1e-8)
        worst32 = max(worst32, float(np.abs(rec32.data - x32.data).max()) / scale)
    passed = worst64 <= 1e-12 and worst32 <= 1e-5
    return CheckResult("perfect_reconstruction", passed,
                       f"max abs err {worst64:.2e} (f64), rel {worst32:.2e} (f32) over {trials} trials",
                       time.time() - start)


def check_average_pool_equivalence(filters: Optional[FilterPair] = None, trials: int = 20,
                                   seed: int = 12) -> CheckResult:
    """Haar low-low band == 2x2 stride-2 average pooling (naive oracle)."""
    f = filters if filters is not None else haar_filters()
    rng = np.random.default_rng(seed)
    start = time.time()
    worst = 0.0
    for t in range(trials):
        n, c = 1 + t % 2, 1 + t % 3
        h, w = 2 * int(rng.integers(1, 9)), 2 * int(rng.integers(1, 9))
        x = Tensor4(rng.standard_normal((n, c, h, w)), dtype="f64")
        ll = dwt2_single(x, f).y_ll.data
        pooled = (x.data[:, :, 0::2, 0::2] + x.data[:, :, 0::2, 1::2]
                  + x.data[:, :, 1::2, 0::2] + x.data[:, :, 1::2, 1::2]) / 4.0
        worst = max(worst, float(np.abs(ll - pooled).max()))
    passed = worst <= 1e-14
    return CheckResult("average_pool_equivalence", passed,
                       f"max abs deviation {worst:.2e} over {trials} trials", time.time() - start)


def check_adjoint(trials: int = 10, seed: int = 13) -> CheckResult:
    """<conv2d(x, w), y> == <x, transposed_conv2d(y, w)> on random data."""
    rng = np.random.default_rng(seed)
    start = time.time()
    worst = 0.0
    for t in range(trials):
        ci, co = 1 + t % 3, 1 + (t + 1) % 3
        k, pad = (2, 0) if t % 2 == 0 else (4, 1)
        h, w = 2 * int(rng.integers(2, 6)), 2 * int(rng.integers(2, 6))
        weight = Tensor4(rng.standard_normal((co, ci, k, k)), dtype="f64")
        x = Tensor4(rng.standard_normal((2, ci, h, w)), dtype="f64")
        y = Tensor4(rng.standard_normal((2, co, h // 2, w // 2)), dtype="f64")
        down = ops.conv2d(x, ConvParams(weight, stride=2, padding=pad))
        up = ops.transposed_conv2d(y, ConvParams(weight, stride=2, padding=pad))
        lhs = float((down.data * y.data).sum())
        rhs = float((x.data * up.data).sum())
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-8))
    passed = worst <= 1e-10
    return CheckResult("conv_transposed_conv_adjoint", passed,
                       f"max relative defect {worst:.2e} over {trials} trials", time.time() - start)


def _gradient_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[], float]]]:
    """One small gradient-check instance per differentiable building block."""

    def conv_case():
        x = Tensor4(rng.standard_normal((2, 3, 6, 6)), dtype="f64")
        w = Tensor4(rng.standard_normal((4, 3, 3, 3)), dtype="f64")
        b = Tensor4(rng.standard_normal((1, 4, 1, 1)), dtype="f64")
        return gradient_check(lambda ps: ops.mean_all(ops.conv2d(ps[0], ConvParams(ps[1], ps[2], 1, 1))), [x, w, b])

    def tconv_case():
        x = Tensor4(rng.standard_normal((2, 3, 4, 4)), dtype="f64")
        w = Tensor4(rng.standard_normal((3, 2, 2, 2)), dtype="f64")
        b = Tensor4(rng.standard_normal((1, 2, 1, 1)), dtype="f64")
        return gradient_check(
            lambda ps: ops.mean_all(ops.relu(ops.transposed_conv2d(ps[0], ConvParams(ps[1], ps[2], 2, 0)))), [x, w, b]
        )

    def dwt_case():
        x = Tensor4(rng.standard_normal((1, 2, 6, 6)), dtype="f64")
        weights = [Tensor4(rng.standard_normal((1, 2, 3, 3)), dtype="f64") for _ in range(4)]

        def loss(ps):
            s = dwt2_single(ps[0])
            parts = [ops.mean_all(ops.conv2d(band, ConvParams(wt))) for band, wt in zip(
                (s.y_ll, s.y_lh, s.y_hl, s.y_hh), ps[1:])]
            out = parts[0]
            for part in parts[1:]:
                out = ops.add(out, part)
            return out

        return gradient_check(loss, [x] + weights)

    def idwt_case():
        bands = [Tensor4(rng.standard_normal((1, 2, 3, 3)), dtype="f64") for _ in range(4)]
        return gradient_check(lambda ps: ops.mean_all(ops.relu(idwt2_single(SubbandSet(*ps)))), bands)

    def unpool_case():
        low = Tensor4(rng.standard_normal((1, 2, 3, 3)), dtype="f64")
        highs = [Tensor4(rng.standard_normal((1, 2, 3, 3)), dtype="f64") for _ in range(3)]
        skip = Tensor4(rng.standard_normal((1, 2, 6, 6)), dtype="f64")
        return gradient_check(
            lambda ps: ops.mean_all(ops.relu(wavelet_unpool(UnpoolInputs(ps[0], tuple(ps[1:4]), ps[4])))),
            [low, *highs, skip],
        )

    def lfp_case():
        pyr = LfpPyramid(4, PyramidConfig(2, "lfp", (2, 2), 3), rng=rng, dtype="f64")
        x = Tensor4(rng.standard_normal((1, 4, 4, 4)), dtype="f64")
        params = [x] + pyr.parameters()
        return gradient_check(lambda ps: ops.mean_all(pyr.forward(ps[0])), params)

    def ffc_case():
        pyr = FfcPyramid(3, PyramidConfig(2, "ffc", (3, 3), 2), rng=rng, dtype="f64")
        x = Tensor4(rng.standard_normal((1, 3, 4, 4)), dtype="f64")
        params = [x] + pyr.parameters()
        return gradient_check(lambda ps: ops.mean_all(pyr.forward(ps[0])), params)

    def resblock_case():
        block = ResidualBlock(3, 2, 4, stride=2, rng=rng, dtype="f64")
        x = Tensor4(rng.standard_normal((2, 3, 4, 4)), dtype="f64")
        params = [x] + block.parameters()
        return gradient_check(lambda ps: ops.mean_all(block.forward(ps[0], training=True)), params, step=1e-6)

    def upconv_case():
        block = UpconvBlock(3, 2, 2, num_blocks=1, rng=rng, dtype="f64")
        x = Tensor4(rng.standard_normal((1, 3, 3, 3)), dtype="f64")
        params = [x] + block.parameters()
        return gradient_check(lambda ps: ops.mean_all(block.forward(ps[0], training=True)), params, step=1e-6)

    def ce_case():
        logits = Tensor4(rng.standard_normal((2, 3, 4, 4)), dtype="f64")
        labels = rng.integers(0, 3, size=(2, 4, 4))
        return gradient_check(lambda ps: cross_entropy(ps[0], labels), [logits])

    def bootstrap_case():
        logits = Tensor4(rng.standard_normal((2, 3, 4, 4)), dtype="f64")
        labels = rng.integers(0, 3, size=(2, 4, 4))
        cfg = LossConfig(kind="bootstrap_ce", k_pixels=5, k_reference_area=None)
        return gradient_check(lambda ps: bootstrap_ce(ps[0], labels, cfg), [logits])

    return [
        ("conv2d", conv_case),
        ("transposed_conv2d", tconv_case),
        ("dwt2", dwt_case),
        ("idwt2", idwt_case),
        ("wavelet_unpool", unpool_case),
        ("lfp_pyramid", lfp_case),
        ("ffc_pyramid", ffc_case),
        ("residual_block", resblock_case),
        ("upconv_block", upconv_case),
        ("cross_entropy", ce_case),
        ("bootstrap_ce", bootstrap_case),
    ]


def check_gradients(instances: int = 3, seed: int = 14, tolerance: float = 1e-4) -> CheckResult:
    rng = np.random.default_rng(seed)
    start = time.time()
    worst_name, worst = "", 0.0
    for _ in range(instances):
        for name, case in _gradient_cases(rng):
            err = case()
            if err > worst:
                worst_name, worst = name, err
    passed = worst <= tolerance
    return CheckResult("gradient_finite_difference", passed,
                       f"worst relative error {worst:.2e} ({worst_name}) over {instances} instance(s) per op",
                       time.time() - start)


#: Full-scale reference trace: (layer, out_h, out_w, channels) at 512x1024.
FULL_SCALE_TRACE = (
    ("conv1", 256, 512, 64),
    ("maxpool", 128, 256, 64),
    ("conv2_x", 128, 256, 256),
    ("dwt2", 64, 128, 256),
    ("conv3_1", 64, 128, 512),
    ("conv3_x", 64, 128, 512),
    ("dwt3", 32, 64, 512),
    ("conv4_1", 32, 64, 1024),
    ("conv4_x", 32, 64, 1024),
    ("dwt4", 16, 32, 1024),
    ("conv5_1", 16, 32, 2048),
    ("conv5_x", 16, 32, 2048),
    ("pyramid", 16, 32, 1024),
    ("idwt4", 32, 64, 1024),
    ("dconv4_x", 32, 64, 512),
    ("idwt3", 64, 128, 512),
    ("dconv3_x", 64, 128, 256),
    ("idwt2", 128, 256, 256),
    ("dconv2_x", 128, 256, 128),
    ("upconv2_x", 256, 512, 64),
    ("upconv1_x", 512, 1024, 64),
)


def check_shape_conformance() -> CheckResult:
    """Full-scale trace of the wavelet-ffc variant against the reference dims."""
    start = time.time()
    cfg = ModelConfig(variant="wavelet_ffc", num_classes=19, input_dims=(512, 1024), width_mult=1.0)
    rows = {r.layer: r.dims for r in shape_trace(cfg)}
    bad = []
    for layer, h, w, c in FULL_SCALE_TRACE:
        if rows.get(layer) != (h, w, c):
            bad.append(f"{layer}: got {rows.get(layer)}, want {(h, w, c)}")
    passed = not bad
    detail = f"all {len(FULL_SCALE_TRACE)} stage dims match" if passed else "; ".join(bad)
    return CheckResult("full_scale_shape_trace", passed, detail, time.time() - start)


def run_all(filters: Optional[FilterPair] = None, gradient_instances: int = 3,
            printer: Optional[Callable[[str], None]] = print) -> list[CheckResult]:
    """Execute every suite; one pass/fail line per property when printing."""
    results = [
        check_perfect_reconstruction(filters),
        check_average_pool_equivalence(filters),
        check_adjoint(),
        check_gradients(instances=gradient_instances),
        check_shape_conformance(),
    ]
    if printer is not None:
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            printer(f"{status}  {r.name:<32} {r.seconds:6.2f}s  {r.detail}")
    return results
