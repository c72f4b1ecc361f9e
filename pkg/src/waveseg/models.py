"""Model family assembly: the plain encoder-decoder baseline, the two
pyramid-augmented baselines, and the two wavelet-unpooling variants.

The encoder is a bottleneck residual network that halves the resolution five
times (stem conv, max pool, and the first block of stages 3-5). Wavelet
variants analyze the outputs of stages 2-4 and route the three high-band
triples to the matching decoder unpooling stages; baselines route nothing and
upscale with learned transposed convolutions instead. Between encoder and
decoder sits either a wavelet context pyramid or, for the plain baseline, a
single 1x1 bridge convolution.

``width_mult`` scales every channel count (rounded to a multiple of 4, min 4)
so the same wiring runs anywhere from full scale down to sub-million-parameter
desk scale. ``shape_trace`` computes the per-stage output dims from config
arithmetic alone, without allocating any weights.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, ContractError, ShapeError
from .layers import (
    BatchNorm2d,
    Conv2d,
    FfcPyramid,
    Layer,
    LayerList,
    LfpPyramid,
    PyramidConfig,
    ResidualBlock,
    TransposedUnpool,
    UpconvBlock,
    WaveletUnpool,
)
from .tensor import Tensor4
from .wavelet import dwt2_single

VARIANTS = ("baseline", "baseline_lfp", "baseline_ffc", "wavelet_lfp", "wavelet_ffc")

#: base (width_mult = 1) channel plan: stem, stage bottleneck/output widths,
#: decoder stage widths, and the bridge/pyramid output width
_STEM = 64
_STAGE_MID = (64, 128, 256, 512)
_STAGE_OUT = (256, 512, 1024, 2048)
_DEC_MID = (256, 128, 64)
_DEC_OUT = (512, 256, 128)
_UPCONV = 64
_BRIDGE_OUT = 1024


def scaled_channels(base: int, width_mult: float) -> int:
    """Scale a channel count, rounding to the nearest multiple of 4 (min 4)."""
    return max(4, int(round(base * width_mult / 4.0)) * 4)


@dataclass
class ModelConfig:
    """Everything needed to build one variant at any scale."""

    variant: str = "wavelet_ffc"
    num_classes: int = 19
    input_dims: tuple[int, int] = (512, 1024)
    width_mult: float = 1.0
    blocks_per_stage: tuple[int, int, int, int] = (3, 4, 23, 3)
    decoder_blocks: tuple[int, int, int, int, int] = (3, 3, 3, 3, 2)
    pyramid_levels: Optional[int] = None
    batch_norm: bool = True
    dtype: str = "f32"

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive; got {self.num_classes}")
        h, w = self.input_dims
        if h < 32 or w < 32 or h % 32 or w % 32:
            raise ConfigError(f"input_dims {self.input_dims} must be multiples of 32 (five 2x reductions)")
        if self.width_mult <= 0:
            raise ConfigError(f"width_mult must be positive; got {self.width_mult}")
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 1:
            raise ConfigError(f"blocks_per_stage needs 4 positive entries; got {self.blocks_per_stage}")
        if len(self.decoder_blocks) != 5 or min(self.decoder_blocks) < 1:
            raise ConfigError(f"decoder_blocks needs 5 positive entries; got {self.decoder_blocks}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be 'f32' or 'f64'; got {self.dtype!r}")
        if self.has_pyramid:
            levels = self.resolved_pyramid_levels()
            c5 = self.channels("stage_out")[3]
            if c5 % levels:
                raise ConfigError(
                    f"conv5 channels ({c5}) are not divisible by {levels} pyramid levels; "
                    "per-level widths would not add back to the input"
                )
        return self

    @property
    def has_pyramid(self) -> bool:
        return self.variant != "baseline"

    @property
    def uses_wavelet_unpooling(self) -> bool:
        return self.variant in ("wavelet_lfp", "wavelet_ffc")

    @property
    def pyramid_variant(self) -> Optional[str]:
        if not self.has_pyramid:
            return None
        return "lfp" if self.variant.endswith("lfp") else "ffc"

    def channels(self, which: str):
        wm = self.width_mult
        table = {
            "stem": scaled_channels(_STEM, wm),
            "stage_mid": tuple(scaled_channels(c, wm) for c in _STAGE_MID),
            "stage_out": tuple(scaled_channels(c, wm) for c in _STAGE_OUT),
            "dec_mid": tuple(scaled_channels(c, wm) for c in _DEC_MID),
            "dec_out": tuple(scaled_channels(c, wm) for c in _DEC_OUT),
            "upconv": scaled_channels(_UPCONV, wm),
            "bridge_out": scaled_channels(_BRIDGE_OUT, wm),
        }
        return table[which]

    def resolved_pyramid_levels(self) -> int:
        """Explicit level count, or the deepest feasible cascade up to 4."""
        h, w = self.input_dims
        c5h, c5w = h // 32, w // 32
        if self.pyramid_levels is not None:
            if self.pyramid_levels < 1:
                raise ConfigError(f"pyramid_levels must be >= 1; got {self.pyramid_levels}")
            if c5h % (2**self.pyramid_levels) or c5w % (2**self.pyramid_levels):
                raise ConfigError(
                    f"pyramid_levels={self.pyramid_levels} needs the 1/32-scale feature "
                    f"({c5h}x{c5w}) divisible by {2 ** self.pyramid_levels}"
                )
            return self.pyramid_levels
        levels = 0
        while levels < 4 and c5h % (2 ** (levels + 1)) == 0 and c5w % (2 ** (levels + 1)) == 0:
            levels += 1
        if levels == 0:
            raise ConfigError(
                f"input_dims {self.input_dims} leave a {c5h}x{c5w} feature at 1/32 scale; "
                "no pyramid level fits (the pyramid variants need at least 64x64 input)"
            )
        return levels

    def pyramid_config(self) -> Optional[PyramidConfig]:
        if not self.has_pyramid:
            return None
        levels = self.resolved_pyramid_levels()
        c5 = self.channels("stage_out")[3]
        variant = self.pyramid_variant
        widths = (c5 // levels,) * levels if variant == "lfp" else (c5,) * levels
        return PyramidConfig(levels=levels, variant=variant, level_channels=widths,
                             out_channels=self.channels("bridge_out"))

    def entry_divisor(self) -> int:
        """Spatial divisibility the forward pass requires at the graph entry."""
        if self.has_pyramid:
            return 32 * 2 ** self.resolved_pyramid_levels()
        return 32


def _make_stage(in_c: int, mid_c: int, out_c: int, blocks: int, first_stride: int, *,
                batch_norm: bool, rng, dtype: str) -> LayerList:
    stage = [ResidualBlock(in_c, mid_c, out_c, stride=first_stride, batch_norm=batch_norm, rng=rng, dtype=dtype)]
    stage += [
        ResidualBlock(out_c, mid_c, out_c, batch_norm=batch_norm, rng=rng, dtype=dtype)
        for _ in range(blocks - 1)
    ]
    return LayerList(stage)


class NetworkGraph(Layer):
    """A built variant: ordered layers, named parameters, and the band routing.

    ``routing`` lists (producer, consumer) pairs for the encoder high-band
    triples; wavelet variants route exactly three, baselines none.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        cfg = replace(cfg, blocks_per_stage=tuple(cfg.blocks_per_stage),
                      decoder_blocks=tuple(cfg.decoder_blocks),
                      input_dims=tuple(cfg.input_dims)).validate()
        self.config = cfg
        bn, dtype = cfg.batch_norm, cfg.dtype
        stem = cfg.channels("stem")
        mids, outs = cfg.channels("stage_mid"), cfg.channels("stage_out")
        dmids, douts = cfg.channels("dec_mid"), cfg.channels("dec_out")
        upc, bridge_out = cfg.channels("upconv"), cfg.channels("bridge_out")

        self.conv1 = Conv2d(3, stem, 7, stride=2, padding=3, bias=not bn, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(stem, dtype=dtype) if bn else None
        self.conv2_x = _make_stage(stem, mids[0], outs[0], cfg.blocks_per_stage[0], 1,
                                   batch_norm=bn, rng=rng, dtype=dtype)
        self.conv3_x = _make_stage(outs[0], mids[1], outs[1], cfg.blocks_per_stage[1], 2,
                                   batch_norm=bn, rng=rng, dtype=dtype)
        self.conv4_x = _make_stage(outs[1], mids[2], outs[2], cfg.blocks_per_stage[2], 2,
                                   batch_norm=bn, rng=rng, dtype=dtype)
        self.conv5_x = _make_stage(outs[2], mids[3], outs[3], cfg.blocks_per_stage[3], 2,
                                   batch_norm=bn, rng=rng, dtype=dtype)

        pcfg = cfg.pyramid_config()
        if pcfg is None:
            self.bridge = Conv2d(outs[3], bridge_out, 1, rng=rng, dtype=dtype)
        elif pcfg.variant == "lfp":
            self.bridge = LfpPyramid(outs[3], pcfg, rng=rng, dtype=dtype)
        else:
            self.bridge = FfcPyramid(outs[3], pcfg, rng=rng, dtype=dtype)

        if cfg.uses_wavelet_unpooling:
            self.unpool4 = WaveletUnpool()
            self.unpool3 = WaveletUnpool()
            self.unpool2 = WaveletUnpool()
            self.routing = (("dwt2", "idwt2"), ("dwt3", "idwt3"), ("dwt4", "idwt4"))
        else:
            self.unpool4 = TransposedUnpool(outs[2], rng=rng, dtype=dtype)
            self.unpool3 = TransposedUnpool(outs[1], rng=rng, dtype=dtype)
            self.unpool2 = TransposedUnpool(outs[0], rng=rng, dtype=dtype)
            self.routing = ()

        self.dconv4_x = _make_stage(outs[2], dmids[0], douts[0], cfg.decoder_blocks[0], 1,
                                    batch_norm=bn, rng=rng, dtype=dtype)
        self.dconv3_x = _make_stage(douts[0], dmids[1], douts[1], cfg.decoder_blocks[1], 1,
                                    batch_norm=bn, rng=rng, dtype=dtype)
        self.dconv2_x = _make_stage(douts[1], dmids[2], douts[2], cfg.decoder_blocks[2], 1,
                                    batch_norm=bn, rng=rng, dtype=dtype)
        self.upconv2_x = UpconvBlock(douts[2], upc, upc, cfg.decoder_blocks[3], batch_norm=bn, rng=rng, dtype=dtype)
        self.upconv1_x = UpconvBlock(upc, upc, upc, cfg.decoder_blocks[4], batch_norm=bn, rng=rng, dtype=dtype)
        self.classifier = Conv2d(upc, cfg.num_classes, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor4, training: bool = False, capture: Optional[dict] = None) -> Tensor4:
        """Per-pixel class logits at the input resolution."""
        if x.c != 3:
            raise ShapeError(f"forward: expected 3 input channels (RGB); got dims {x.dims}")
        if x.dtype != self.config.dtype:
            raise ContractError(f"forward: input dtype {x.dtype} != model dtype {self.config.dtype}")
        div = self.config.entry_divisor()
        if x.h % div or x.w % div:
            raise ShapeError(
                f"forward: input spatial dims {x.h}x{x.w} must be divisible by {div} for this configuration"
            )
        cap = capture if capture is not None else {}

        c1 = self.conv1.forward(x, training)
        if self.bn1 is not None:
            c1 = self.bn1.forward(c1, training)
        c1 = ops.relu(c1)
        pooled = ops.max_pool_2x2(c1)
        c2 = self.conv2_x.forward(pooled, training)
        c3 = self.conv3_x.forward(c2, training)
        c4 = self.conv4_x.forward(c3, training)
        c5 = self.conv5_x.forward(c4, training)
        cap.update(conv1=c1, conv2_x=c2, conv3_x=c3, conv4_x=c4, conv5_x=c5)

        bridge = self.bridge.forward(c5, training)
        cap["bridge"] = bridge

        wavelet = self.config.uses_wavelet_unpooling
        if wavelet:
            d2, d3, d4 = dwt2_single(c2), dwt2_single(c3), dwt2_single(c4)
            u4 = self.unpool4.forward(bridge, d4.highs, c4, training)
        else:
            u4 = self.unpool4.forward(bridge, c4, training)
        dc4 = self.dconv4_x.forward(u4, training)
        u3 = self.unpool3.forward(dc4, d3.highs, c3, training) if wavelet else self.unpool3.forward(dc4, c3, training)
        dc3 = self.dconv3_x.forward(u3, training)
        u2 = self.unpool2.forward(dc3, d2.highs, c2, training) if wavelet else self.unpool2.forward(dc3, c2, training)
        dc2 = self.dconv2_x.forward(u2, training)
        up2 = self.upconv2_x.forward(dc2, training)
        up1 = self.upconv1_x.forward(up2, training)
        logits = self.classifier.forward(up1, training)
        cap.update(unpool4=u4, dconv4_x=dc4, unpool3=u3, dconv3_x=dc3, unpool2=u2,
                   dconv2_x=dc2, upconv2_x=up2, upconv1_x=up1, logits=logits)
        return logits

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            state[name] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], path: str = "checkpoint") -> None:
        from .checkpoint import check_state_compatible

        check_state_compatible(self.state_dict(), state, path=path)
        for name, p in self.named_parameters():
            p.data[...] = state[name]
        for name, b in self.named_buffers():
            b[...] = state[name]


def build_model(cfg: ModelConfig, seed: int = 0, rng: Optional[np.random.Generator] = None) -> NetworkGraph:
    """Validate the config and assemble the variant with seeded He init."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E6]))
    return NetworkGraph(cfg, rng)


def forward(graph: NetworkGraph, batch: Tensor4, training: bool = False) -> Tensor4:
    return graph.forward(batch, training=training)


def param_count(graph: Layer) -> int:
    """Exact count of trainable scalars (buffers excluded)."""
    return graph.param_count()


@dataclass
class TraceRow:
    layer: str
    operation: str
    inputs: str
    out_h: int
    out_w: int
    channels: int

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.out_h, self.out_w, self.channels


def shape_trace(cfg: ModelConfig) -> list[TraceRow]:
    """Per-stage output dims, computed symbolically (no weights allocated)."""
    cfg.validate()
    h, w = cfg.input_dims
    stem = cfg.channels("stem")
    outs = cfg.channels("stage_out")
    douts = cfg.channels("dec_out")
    upc = cfg.channels("upconv")
    bridge_out = cfg.channels("bridge_out")
    mids = cfg.channels("stage_mid")
    dmids = cfg.channels("dec_mid")
    wavelet = cfg.uses_wavelet_unpooling
    rows: list[TraceRow] = []

    def row(layer, operation, inputs, hh, ww, cc):
        rows.append(TraceRow(layer, operation, inputs, hh, ww, cc))

    row("conv1", f"(7x7, {stem}), s2", "RGB", h // 2, w // 2, stem)
    row("maxpool", "(2x2), s2", "conv1", h // 4, w // 4, stem)
    row("conv2_x", f"resblock ({mids[0]}, {outs[0]})x{cfg.blocks_per_stage[0]}", "maxpool",
        h // 4, w // 4, outs[0])
    if wavelet:
        row("dwt2", "dwt", "conv2_x", h // 8, w // 8, outs[0])
    for i, name in ((1, "conv3"), (2, "conv4"), (3, "conv5")):
        scale = 2 ** (i + 2)
        row(f"{name}_1", f"resblock ({mids[i]}, {outs[i]}), s2", f"conv{i + 1}_x", h // scale, w // scale, outs[i])
        if cfg.blocks_per_stage[i] > 1:
            row(f"{name}_x", f"resblock ({mids[i]}, {outs[i]})x{cfg.blocks_per_stage[i] - 1}", f"{name}_1",
                h // scale, w // scale, outs[i])
        if wavelet and name != "conv5":
            row(f"dwt{i + 2}", "dwt", f"{name}_x", h // (scale * 2), w // (scale * 2), outs[i])
    if cfg.has_pyramid:
        levels = cfg.resolved_pyramid_levels()
        row("pyramid", f"{cfg.pyramid_variant} pyramid, {levels} levels", "conv5_x", h // 32, w // 32, bridge_out)
    else:
        row("bridge", f"(1x1, {bridge_out})", "conv5_x", h // 32, w // 32, bridge_out)
    unpool_op = "idwt" if wavelet else "transposed conv, s2"
    unpool_name = {4: "idwt4", 3: "idwt3", 2: "idwt2"} if wavelet else {4: "tconv4", 3: "tconv3", 2: "tconv2"}
    feeds = ["pyramid" if cfg.has_pyramid else "bridge", "dconv4_x", "dconv3_x"]
    for j, stage in enumerate((4, 3, 2)):
        scale = 2**stage
        cin = outs[stage - 2]
        band = f" + Y{stage} high bands" if wavelet else ""
        row(unpool_name[stage], unpool_op, feeds[j] + band, h // scale, w // scale, cin)
        row(f"dconv{stage}_x", f"resblock ({dmids[j]}, {douts[j]})x{cfg.decoder_blocks[j]}",
            f"{unpool_name[stage]} + conv{stage}_x", h // scale, w // scale, douts[j])
    row("upconv2_x", f"upconv ({upc}, {upc})x{cfg.decoder_blocks[3]}", "dconv2_x", h // 2, w // 2, upc)
    row("upconv1_x", f"upconv ({upc}, {upc})x{cfg.decoder_blocks[4]}", "upconv2_x", h, w, upc)
    row("classifier", f"(1x1, {cfg.num_classes})", "upconv1_x", h, w, cfg.num_classes)
    return rows
