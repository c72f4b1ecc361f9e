"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS line when its criterion holds (visible with -s or
in captured output); a failing criterion fails the test itself. The
end-to-end criterion trains all five variants and takes a few minutes.
"""

import json
import time

import numpy as np
import pytest

from waveseg import (
    ConfusionMatrix,
    LossConfig,
    ModelConfig,
    OptimConfig,
    Tensor4,
    VARIANTS,
    bootstrap_ce,
    build_model,
    cross_entropy,
    dwt2_multi,
    dwt2_single,
    evaluate,
    idwt2_multi,
    iou_scores,
    ms_tta_predict,
    param_count,
    shape_trace,
    synth_generate,
    train,
)
from waveseg.cli import main
from waveseg.evaluation import predict_probs
from waveseg.verify import FULL_SCALE_TRACE, _gradient_cases

#: end-to-end setup: 4-class synthetic scenes, 64x64, 256 train / 64 val,
#: width 1/8, batch 4, momentum 0.9, step decay 0.9 every 10 epochs. The
#: base rate is retuned for from-scratch desk training (the 0.001 default
#: presumes a pretrained encoder and converges too slowly here).
E2E_SEED_TRAIN, E2E_SEED_VAL, E2E_SEED_RUN = 42, 43, 5
E2E_LR0 = 0.003
E2E_MAX_ITERATIONS = 1600


def desk_model(variant):
    return ModelConfig(variant=variant, num_classes=4, input_dims=(64, 64), width_mult=0.125,
                       blocks_per_stage=(1, 1, 1, 1), decoder_blocks=(1, 1, 1, 1, 1))


def report(criterion, detail):
    print(f"ACCEPTANCE {criterion}: PASS  {detail}")


def test_criterion_1_perfect_reconstruction():
    rng = np.random.default_rng(1001)
    start = time.time()
    worst64 = worst32 = 0.0
    for t in range(100):
        levels = 1 + t % 4
        h = 16 * int(rng.integers(1, 5))
        w = 16 * int(rng.integers(1, 5))
        x64 = Tensor4(rng.standard_normal((1 + t % 2, 1 + t % 3, h, w)), dtype="f64")
        rec64 = idwt2_multi(dwt2_multi(x64, levels))
        worst64 = max(worst64, float(np.abs(rec64.data - x64.data).max()))
        x32 = Tensor4(x64.data, dtype="f32")
        rec32 = idwt2_multi(dwt2_multi(x32, levels))
        rel32 = float(np.abs(rec32.data - x32.data).max()) / max(float(np.abs(x32.data).max()), 1e-8)
        worst32 = max(worst32, rel32)
    elapsed = time.time() - start
    assert worst64 <= 1e-12, f"f64 round-trip error {worst64:.2e}"
    assert worst32 <= 1e-5, f"f32 relative round-trip error {worst32:.2e}"
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s"
    report(1, f"100 round trips, f64 err {worst64:.1e}, f32 rel {worst32:.1e}, {elapsed:.2f}s")


def test_criterion_2_average_pool_equivalence():
    rng = np.random.default_rng(1002)
    worst = 0.0
    for t in range(100):
        h, w = 2 * int(rng.integers(1, 17)), 2 * int(rng.integers(1, 17))
        x = Tensor4(rng.standard_normal((1 + t % 2, 1 + t % 3, h, w)), dtype="f64")
        ll = dwt2_single(x).y_ll.data
        pooled = x.data.reshape(x.n, x.c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        worst = max(worst, float(np.abs(ll - pooled).max()))
    assert worst <= 1e-14, f"low band vs 2x2 average pooling deviates by {worst:.2e}"
    report(2, f"100 inputs, max deviation {worst:.1e}")


def test_criterion_3_gradient_suite():
    rng = np.random.default_rng(1003)
    start = time.time()
    worst = {}
    for _ in range(20):
        for name, case in _gradient_cases(rng):
            err = case()
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.time() - start
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    assert not bad, f"gradient checks out of tolerance: {bad}"
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s"
    worst_name = max(worst, key=worst.get)
    report(3, f"{len(worst)} ops x 20 instances, worst {worst[worst_name]:.1e} ({worst_name}), {elapsed:.1f}s")


def test_criterion_4_parameter_free_unpooling():
    for wavelet_variant, base_variant in (("wavelet_lfp", "baseline_lfp"), ("wavelet_ffc", "baseline_ffc")):
        wavelet = build_model(desk_model(wavelet_variant), seed=0)
        baseline = build_model(desk_model(base_variant), seed=0)
        for stage in ("unpool4", "unpool3", "unpool2"):
            assert getattr(wavelet, stage).param_count() == 0, f"{wavelet_variant}.{stage} has parameters"
        replaced = sum(getattr(baseline, s).param_count() for s in ("unpool4", "unpool3", "unpool2"))
        delta = param_count(baseline) - param_count(wavelet)
        assert delta == replaced and delta > 0, (
            f"{base_variant} - {wavelet_variant} = {delta}, expected the {replaced} unpool parameters")
    report(4, "analysis/synthesis stages own 0 parameters; count deltas equal the replaced kernels")


def test_criterion_5_full_scale_shape_conformance():
    cfg = ModelConfig(variant="wavelet_ffc", num_classes=19, input_dims=(512, 1024), width_mult=1.0)
    start = time.time()
    rows = {r.layer: r.dims for r in shape_trace(cfg)}
    elapsed = time.time() - start
    for layer, h, w, c in FULL_SCALE_TRACE:
        assert rows[layer] == (h, w, c), f"{layer}: got {rows[layer]}, want {(h, w, c)}"
    assert elapsed < 1.0, "trace must be symbolic (no weight allocation)"
    report(5, f"all {len(FULL_SCALE_TRACE)} stage dims match at 512x1024")


def test_criterion_6_bootstrap_degeneracy():
    rng = np.random.default_rng(1006)
    logits = Tensor4(rng.standard_normal((2, 4, 6, 6)), dtype="f64")
    labels = rng.integers(0, 4, size=(2, 6, 6))
    plain = cross_entropy(logits, labels).item()
    degenerate = bootstrap_ce(logits, labels, LossConfig(kind="bootstrap_ce", k_pixels=36,
                                                         k_reference_area=None)).item()
    assert abs(plain - degenerate) <= 1e-12

    losses = np.array([[0.1, 0.2], [0.9, 1.0]])
    p = np.exp(-losses)
    worked = Tensor4(np.stack([np.log(p), np.log1p(-p)])[None], dtype="f64")
    got = bootstrap_ce(worked, np.zeros((1, 2, 2), dtype=np.int64),
                       LossConfig(kind="bootstrap_ce", k_pixels=2, k_reference_area=None)).item()
    assert got == pytest.approx(0.95, abs=1e-12)
    report(6, f"degenerate-K gap {abs(plain - degenerate):.1e}; top-2 worked example = {got:.10f}")


@pytest.fixture(scope="module")
def e2e_results():
    train_set = synth_generate(E2E_SEED_TRAIN, 256, (64, 64), 4)
    val_set = synth_generate(E2E_SEED_VAL, 64, (64, 64), 4)
    optim = OptimConfig(lr0=E2E_LR0, momentum=0.9, decay_factor=0.9, decay_every_epochs=10, batch_size=4)
    results = {}
    for variant in VARIANTS:
        start = time.time()
        res = train(desk_model(variant), optim, LossConfig(kind="ce"), train_set,
                    epochs=32, seed=E2E_SEED_RUN, val_dataset=val_set, val_every=4,
                    max_iterations=E2E_MAX_ITERATIONS)
        results[variant] = {
            "miou": res.final_val_miou,
            "iterations": res.iterations,
            "seconds": time.time() - start,
            "graph": res.graph,
        }
    return results, val_set


@pytest.mark.slow
def test_criterion_7_desk_scale_end_to_end(e2e_results):
    results, _ = e2e_results
    for variant, r in results.items():
        assert r["iterations"] <= 2000, f"{variant} used {r['iterations']} iterations"
        assert r["seconds"] <= 1800, f"{variant} took {r['seconds']:.0f}s (budget 30 min)"
        assert r["miou"] >= 0.80, f"{variant} reached only {r['miou']:.4f} mIoU"
    ffc = results["wavelet_ffc"]["miou"]
    base = results["baseline"]["miou"]
    assert ffc >= base - 0.02, f"wavelet_ffc {ffc:.4f} vs baseline {base:.4f}"
    summary = ", ".join(f"{v}={r['miou']:.3f}" for v, r in results.items())
    report(7, f"{summary} (each <= {E2E_MAX_ITERATIONS} iterations)")


@pytest.mark.slow
def test_criterion_8_ms_tta_identity(e2e_results):
    results, val_set = e2e_results
    graph = results["wavelet_ffc"]["graph"]
    mismatched = 0
    for sample in val_set:
        fused = ms_tta_predict(graph, sample.image, [1.0]).argmax(axis=0)
        plain = predict_probs(graph, Tensor4(sample.image[None], dtype="f32"))[0].argmax(axis=0)
        mismatched += int((fused != plain).sum())
    assert mismatched == 0, f"{mismatched} pixels differ between single-scale fusion and plain inference"
    report(8, f"scales=[1.0] argmax-identical on all {len(val_set)} validation samples")


def test_criterion_9_determinism(tmp_path):
    payload = {
        "seed": 11,
        "model": {"variant": "wavelet_ffc", "num_classes": 4, "input_dims": [64, 64],
                  "width_mult": 0.125, "blocks_per_stage": [1, 1, 1, 1],
                  "decoder_blocks": [1, 1, 1, 1, 1]},
        "loss": {"kind": "ce"},
        "data": {"synth": {"n_train": 8, "n_val": 4, "dims": [64, 64]}, "num_classes": 4},
        "train": {"epochs": 2},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(payload))
    blobs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["train", "-c", str(cfg_path), "--out-dir", str(out), "--quiet"]) == 0
        blobs.append((out / "checkpoint_final.bin").read_bytes())
    assert blobs[0] == blobs[1], "same seed must give bitwise-identical checkpoints"

    graph = build_model(desk_model("wavelet_lfp"), seed=2)
    val = synth_generate(E2E_SEED_VAL, 12, (64, 64), 4)
    forward_order = evaluate(graph, val, num_classes=4)
    reverse_order = evaluate(graph, list(reversed(val)), num_classes=4)
    assert forward_order.mean_iou == reverse_order.mean_iou
    np.testing.assert_allclose(forward_order.per_class, reverse_order.per_class, equal_nan=True)

    conf = ConfusionMatrix(4)
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 4, 500), rng.integers(0, 4, 500)
    conf.update(t, p)
    perm = rng.permutation(500)
    conf_perm = ConfusionMatrix(4)
    conf_perm.update(t[perm], p[perm])
    assert np.array_equal(conf.counts, conf_perm.counts)
    assert iou_scores(conf)[1] == iou_scores(conf_perm)[1]
    report(9, "bitwise-identical checkpoints; evaluation invariant to sample and pixel order")
