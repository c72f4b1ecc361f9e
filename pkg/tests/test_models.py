"""Model assembly: configuration, wiring, parameter bookkeeping, shape trace."""

import numpy as np
import pytest

from waveseg import (
    ModelConfig,
    Tape,
    Tensor4,
    VARIANTS,
    backward,
    build_model,
    ops,
    param_count,
    shape_trace,
)
from waveseg.errors import ConfigError, ShapeError
from waveseg.verify import FULL_SCALE_TRACE


def desk_config(variant="wavelet_ffc", **kw):
    base = dict(variant=variant, num_classes=4, input_dims=(64, 64), width_mult=0.125,
                blocks_per_stage=(1, 1, 1, 1), decoder_blocks=(1, 1, 1, 1, 1))
    base.update(kw)
    return ModelConfig(**base)


class TestModelConfig:
    def test_invalid_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            desk_config(variant="wavelet_fcc").validate()

    def test_input_dims_must_be_multiples_of_32(self):
        with pytest.raises(ConfigError):
            desk_config(input_dims=(60, 64)).validate()

    def test_pyramid_levels_resolution(self):
        assert desk_config().resolved_pyramid_levels() == 1
        assert desk_config(input_dims=(128, 128)).resolved_pyramid_levels() == 2
        full = ModelConfig(variant="wavelet_ffc", input_dims=(512, 1024))
        assert full.resolved_pyramid_levels() == 4

    def test_explicit_pyramid_levels_validated(self):
        with pytest.raises(ConfigError, match="pyramid_levels"):
            desk_config(pyramid_levels=3).validate()

    def test_pyramid_variants_need_room(self):
        with pytest.raises(ConfigError):
            desk_config(input_dims=(32, 32)).validate()
        desk_config(variant="baseline", input_dims=(32, 32)).validate()

    def test_lfp_channel_split_validated(self):
        # conv5 channels (scaled 2048) must divide by the level count
        cfg = desk_config(variant="wavelet_lfp", input_dims=(96, 96), width_mult=0.125)
        # 96/32 = 3 -> no level fits
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_channel_scaling_rounds_to_multiple_of_4(self):
        cfg = desk_config(width_mult=0.1)
        assert all(c % 4 == 0 for c in cfg.channels("stage_out"))
        assert min(cfg.channels("stage_mid")) >= 4


class TestBuildAndForward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_builds_and_produces_finite_logits(self, variant, rng):
        graph = build_model(desk_config(variant), seed=1)
        x = Tensor4(rng.random((1, 3, 64, 64)), dtype="f32")
        logits = graph.forward(x)
        assert logits.dims == (1, 4, 64, 64)
        assert np.isfinite(logits.data).all()

    def test_fully_convolutional_doubling(self, rng):
        graph = build_model(desk_config(), seed=1)
        x = Tensor4(rng.random((1, 3, 128, 128)), dtype="f32")
        assert graph.forward(x).dims == (1, 4, 128, 128)

    def test_entry_shape_error_before_any_compute(self):
        graph = build_model(desk_config(), seed=1)
        with pytest.raises(ShapeError, match="divisible"):
            graph.forward(Tensor4(np.zeros((1, 3, 96, 96), dtype=np.float32)))

    def test_wrong_channel_count_rejected(self):
        graph = build_model(desk_config(), seed=1)
        with pytest.raises(ShapeError, match="RGB"):
            graph.forward(Tensor4(np.zeros((1, 4, 64, 64), dtype=np.float32)))

    def test_width_mult_shape_example(self, rng):
        graph = build_model(desk_config(), seed=0)
        x = Tensor4(rng.random((2, 3, 64, 64)), dtype="f32")
        with Tape() as tape:
            tape.watch_all(graph.parameters())
            logits = graph.forward(x, training=True)
            loss = ops.mean_all(logits)
        grads = backward(tape, loss)
        assert logits.dims == (2, 4, 64, 64)
        assert len(grads) == len(graph.parameters())

    def test_routing_table(self):
        assert build_model(desk_config("wavelet_ffc"), seed=0).routing == (
            ("dwt2", "idwt2"), ("dwt3", "idwt3"), ("dwt4", "idwt4"))
        assert build_model(desk_config("baseline_ffc"), seed=0).routing == ()

    def test_high_bands_propagate_through_zeroed_decoder(self, rng):
        # with every decoder weight zeroed, the finest unpooling output minus
        # the encoder skip isolates the synthesized high-band content. Border
        # zero-padding injects edge frequencies even for flat input, so the
        # probe reads the interior, beyond the receptive-field margin: nonzero
        # for textured input, exactly zero for constant input, and exactly
        # zero either way for the baseline's learned unpooling.
        def probe(variant, image):
            graph = build_model(desk_config(variant, input_dims=(128, 128)), seed=2)
            decoder = [graph.bridge, graph.unpool4, graph.unpool3, graph.unpool2,
                       graph.dconv4_x, graph.dconv3_x, graph.dconv2_x,
                       graph.upconv2_x, graph.upconv1_x, graph.classifier]
            for layer in decoder:
                for p in layer.parameters():
                    p.data[...] = 0.0
            cap = {}
            graph.forward(Tensor4(image, dtype="f32"), capture=cap)
            diff = cap["unpool2"].data - cap["conv2_x"].data
            return float(np.abs(diff[:, :, 8:-8, 8:-8]).max())

        textured = rng.random((1, 3, 128, 128)).astype(np.float32)
        constant = np.full((1, 3, 128, 128), 0.5, dtype=np.float32)
        assert probe("wavelet_ffc", textured) > 1e-6
        assert probe("wavelet_ffc", constant) == 0.0
        assert probe("baseline_ffc", textured) == 0.0


class TestParamCount:
    def test_dwt_idwt_layers_contribute_zero(self):
        graph = build_model(desk_config("wavelet_ffc"), seed=0)
        assert graph.unpool4.param_count() == 0
        assert graph.unpool3.param_count() == 0
        assert graph.unpool2.param_count() == 0

    @pytest.mark.parametrize("pair", [("wavelet_lfp", "baseline_lfp"), ("wavelet_ffc", "baseline_ffc")])
    def test_wavelet_saves_exactly_the_unpool_kernels(self, pair):
        wavelet, baseline = (build_model(desk_config(v), seed=0) for v in pair)
        unpool_params = sum(
            getattr(baseline, name).param_count() for name in ("unpool4", "unpool3", "unpool2"))
        assert unpool_params > 0
        assert param_count(baseline) - param_count(wavelet) == unpool_params

    def test_pyramid_parameters_shape_identical_between_matched_variants(self):
        a = build_model(desk_config("wavelet_lfp"), seed=0)
        b = build_model(desk_config("baseline_lfp"), seed=0)
        shapes_a = [(n, p.dims) for n, p in a.bridge.named_parameters()]
        shapes_b = [(n, p.dims) for n, p in b.bridge.named_parameters()]
        assert shapes_a == shapes_b

    def test_count_invariant_under_forward(self, rng):
        graph = build_model(desk_config(), seed=0)
        before = param_count(graph)
        graph.forward(Tensor4(rng.random((1, 3, 64, 64)), dtype="f32"))
        assert param_count(graph) == before

    def test_desk_scale_stays_under_a_million(self):
        for variant in VARIANTS:
            assert param_count(build_model(desk_config(variant), seed=0)) < 1_000_000


class TestShapeTrace:
    def test_full_scale_trace_matches_reference(self):
        cfg = ModelConfig(variant="wavelet_ffc", num_classes=19, input_dims=(512, 1024))
        rows = {r.layer: r.dims for r in shape_trace(cfg)}
        for layer, h, w, c in FULL_SCALE_TRACE:
            assert rows[layer] == (h, w, c), layer

    def test_trace_needs_no_weight_allocation(self):
        # a trace of the full-scale model must be effectively instant
        import time

        t0 = time.time()
        shape_trace(ModelConfig(variant="wavelet_ffc", input_dims=(512, 1024)))
        assert time.time() - t0 < 0.1

    def test_baseline_trace_has_no_dwt_rows(self):
        rows = [r.layer for r in shape_trace(desk_config("baseline"))]
        assert not any(r.startswith("dwt") or r.startswith("idwt") for r in rows)
        assert "bridge" in rows

    def test_classifier_row_present(self):
        rows = shape_trace(desk_config())
        assert rows[-1].layer == "classifier"
        assert rows[-1].dims == (64, 64, 4)


class TestCheckpointIntegration:
    def test_graph_state_round_trip_is_bitwise(self, tmp_path, rng):
        from waveseg import load_checkpoint, save_checkpoint

        graph = build_model(desk_config(), seed=3)
        # push running stats away from init so buffers are exercised too
        graph.forward(Tensor4(rng.random((2, 3, 64, 64)), dtype="f32"), training=True)
        state = graph.state_dict()
        path = tmp_path / "model.bin"
        save_checkpoint(path, state, meta={"variant": "wavelet_ffc"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"variant": "wavelet_ffc"}
        assert loaded.keys() == state.keys()
        for name in state:
            assert np.array_equal(loaded[name], state[name]), name
        other = build_model(desk_config(), seed=9)
        other.load_state_dict(loaded)
        for (_, a), (_, b) in zip(other.named_parameters(), graph.named_parameters()):
            assert np.array_equal(a.data, b.data)
