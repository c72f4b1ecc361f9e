"""Network building blocks: residual/upconvolution blocks, wavelet unpooling,
and the two wavelet context pyramids.

Layers are immutable after construction: forward passes allocate fresh
tensors and are reentrant, and parameters are only mutated by the optimizer
between passes (batch-norm running statistics being the one documented
exception, updated during training-mode forwards).

Wavelet unpooling upscales a coarse decoder feature by synthesizing it with
the high-frequency bands cached from the encoder's analysis of the matching
stage, then adds the encoder skip:

    out = idwt2_single(y_ll~, y_lh, y_hl, y_hh) + skip

It contributes zero trainable parameters; the baseline's learned counterpart
(transposed convolution plus skip) is :class:`TransposedUnpool`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .ops import ConvParams
from .tensor import Tensor4, np_dtype
from .wavelet import FilterPair, SubbandSet, dwt2_single, haar_filters, idwt2_single


class Layer:
    """Minimal parameter container; children and params register on setattr."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor4):
            self._params[name] = value
        elif isinstance(value, Layer):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor4]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class LayerList(Layer):
    """Sequential child container with stable numeric names."""

    def __init__(self, layers: Sequence[Layer]):
        super().__init__()
        self._items = list(layers)
        for i, layer in enumerate(self._items):
            self._children[str(i)] = layer

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        for layer in self._items:
            x = layer.forward(x, training=training)
        return x


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype: str) -> np.ndarray:
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(np_dtype(dtype))


class Conv2d(Layer):
    def __init__(self, in_c: int, out_c: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, *, rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        self.in_c, self.out_c = in_c, out_c
        self.stride, self.padding = stride, padding
        self.weight = Tensor4(he_normal(rng, (out_c, in_c, kernel, kernel), in_c * kernel * kernel, dtype))
        self.bias = Tensor4(np.zeros((1, out_c, 1, 1), dtype=np_dtype(dtype))) if bias else None

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        return ops.conv2d(x, ConvParams(self.weight, self.bias, self.stride, self.padding))


class TransposedConv2d(Layer):
    """2x upscaling transposed convolution (kernel 2, stride 2)."""

    def __init__(self, in_c: int, out_c: int, bias: bool = True, *, rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        self.in_c, self.out_c = in_c, out_c
        self.weight = Tensor4(he_normal(rng, (in_c, out_c, 2, 2), in_c, dtype))
        self.bias = Tensor4(np.zeros((1, out_c, 1, 1), dtype=np_dtype(dtype))) if bias else None

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        return ops.transposed_conv2d(x, ConvParams(self.weight, self.bias, stride=2, padding=0))


class BatchNorm2d(Layer):
    def __init__(self, channels: int, *, dtype: str = "f32", momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        nd = np_dtype(dtype)
        self.gamma = Tensor4(np.ones((1, channels, 1, 1), dtype=nd))
        self.beta = Tensor4(np.zeros((1, channels, 1, 1), dtype=nd))
        self.register_buffer("running_mean", np.zeros((1, channels, 1, 1), dtype=nd))
        self.register_buffer("running_var", np.ones((1, channels, 1, 1), dtype=nd))

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              training=training, momentum=self.momentum, eps=self.eps)


class _ConvBn(Layer):
    """Conv followed by optional batch norm; bias only when norm is off."""

    def __init__(self, in_c, out_c, kernel, stride=1, padding=0, *, batch_norm=True, rng, dtype="f32"):
        super().__init__()
        self.conv = Conv2d(in_c, out_c, kernel, stride, padding, bias=not batch_norm, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(out_c, dtype=dtype) if batch_norm else None

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        y = self.conv.forward(x, training)
        if self.bn is not None:
            y = self.bn.forward(y, training)
        return y


class ResidualBlock(Layer):
    """Bottleneck block: [1x1, mid] -> [3x3, mid, stride] -> [1x1, out] + shortcut.

    A 1x1 projection shortcut (with norm) is inserted whenever the channel
    count or stride changes; otherwise the shortcut is the identity.
    """

    def __init__(self, in_c: int, mid_c: int, out_c: int, stride: int = 1, *,
                 batch_norm: bool = True, rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        self.in_c, self.mid_c, self.out_c, self.stride = in_c, mid_c, out_c, stride
        self.conv_a = _ConvBn(in_c, mid_c, 1, batch_norm=batch_norm, rng=rng, dtype=dtype)
        self.conv_b = _ConvBn(mid_c, mid_c, 3, stride=stride, padding=1, batch_norm=batch_norm, rng=rng, dtype=dtype)
        self.conv_c = _ConvBn(mid_c, out_c, 1, batch_norm=batch_norm, rng=rng, dtype=dtype)
        if in_c != out_c or stride != 1:
            self.proj = _ConvBn(in_c, out_c, 1, stride=stride, batch_norm=batch_norm, rng=rng, dtype=dtype)
        else:
            self.proj = None

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        h = ops.relu(self.conv_a.forward(x, training))
        h = ops.relu(self.conv_b.forward(h, training))
        h = self.conv_c.forward(h, training)
        shortcut = self.proj.forward(x, training) if self.proj is not None else x
        if h.dims != shortcut.dims:
            raise ShapeError(f"ResidualBlock: branch dims {h.dims} != shortcut dims {shortcut.dims}")
        return ops.relu(ops.add(h, shortcut))


class UpconvBlock(Layer):
    """Transposed convolution doubling the resolution, then residual blocks."""

    def __init__(self, in_c: int, mid_c: int, out_c: int, num_blocks: int, *,
                 batch_norm: bool = True, rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        self.upconv = TransposedConv2d(in_c, out_c, rng=rng, dtype=dtype)
        self.blocks = LayerList([
            ResidualBlock(out_c, mid_c, out_c, batch_norm=batch_norm, rng=rng, dtype=dtype)
            for _ in range(num_blocks)
        ])

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        return self.blocks.forward(self.upconv.forward(x, training), training)


@dataclass
class UnpoolInputs:
    """Arguments of one wavelet unpooling: coarse decoder feature, the cached
    encoder high bands at the same resolution, and the 2x-resolution skip."""

    y_ll_tilde: Tensor4
    highs: tuple[Tensor4, Tensor4, Tensor4]
    skip: Tensor4


def wavelet_unpool(inputs: UnpoolInputs, filters: Optional[FilterPair] = None) -> Tensor4:
    """Parameter-free upscaling: idwt(decoder low band, encoder highs) + skip."""
    y = inputs.y_ll_tilde
    for name, t in zip(("y_lh", "y_hl", "y_hh"), inputs.highs):
        if t.dims != y.dims:
            raise ShapeError(f"wavelet_unpool: {name} dims {t.dims} != y_ll_tilde dims {y.dims}")
    expect = (y.n, y.c, y.h * 2, y.w * 2)
    if inputs.skip.dims != expect:
        raise ShapeError(f"wavelet_unpool: skip dims {inputs.skip.dims} != expected {expect}")
    rec = idwt2_single(SubbandSet(y, *inputs.highs), filters)
    return ops.add(rec, inputs.skip)


class WaveletUnpool(Layer):
    """Layer wrapper around :func:`wavelet_unpool`; owns no parameters."""

    def __init__(self, filters: Optional[FilterPair] = None):
        super().__init__()
        self.filters = filters if filters is not None else haar_filters()

    def forward(self, y_ll_tilde: Tensor4, highs, skip: Tensor4, training: bool = False) -> Tensor4:
        return wavelet_unpool(UnpoolInputs(y_ll_tilde, tuple(highs), skip), self.filters)


class TransposedUnpool(Layer):
    """Learned upscaling used by the baselines: 2x transposed conv, then +skip."""

    def __init__(self, channels: int, *, rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        self.upconv = TransposedConv2d(channels, channels, rng=rng, dtype=dtype)

    def forward(self, x: Tensor4, skip: Tensor4, training: bool = False) -> Tensor4:
        up = self.upconv.forward(x, training)
        if up.dims != skip.dims:
            raise ShapeError(f"TransposedUnpool: upscaled dims {up.dims} != skip dims {skip.dims}")
        return ops.add(up, skip)


@dataclass
class PyramidConfig:
    """Geometry of a wavelet context pyramid.

    ``level_channels`` holds the per-level 1x1 conv widths. For the
    low-frequency-propagation variant they must sum to the pyramid input
    channels so the upsampled concat can be added to the input; for the
    full-frequency-composition variant every entry must equal the input
    channels so the synthesis lattice stays channel-consistent.
    """

    levels: int = 4
    variant: str = "lfp"
    level_channels: tuple[int, ...] = (512, 512, 512, 512)
    out_channels: int = 1024

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"PyramidConfig: levels must be >= 1; got {self.levels}")
        if self.variant not in ("lfp", "ffc"):
            raise ConfigError(f"PyramidConfig: variant must be 'lfp' or 'ffc'; got {self.variant!r}")
        if len(self.level_channels) != self.levels:
            raise ConfigError(
                f"PyramidConfig: {self.levels} levels but {len(self.level_channels)} level_channels entries"
            )
        if self.out_channels < 1 or min(self.level_channels) < 1:
            raise ConfigError("PyramidConfig: channel counts must be positive")


def _check_pyramid_input(name: str, x: Tensor4, in_c: int, levels: int) -> None:
    if x.c != in_c:
        raise ShapeError(f"{name}: input has {x.c} channels, expected {in_c}")
    div = 2**levels
    if x.h % div or x.w % div:
        raise ShapeError(f"{name}: spatial dims {x.h}x{x.w} must be divisible by {div} for {levels} levels")


class LfpPyramid(Layer):
    """Low-frequency propagation: cascade the raw low-low band, convolve each
    level down to its width, bilinearly upsample everything back to the input
    resolution, concat, add the input, and project.

    The analysis chain deliberately consumes the *unconvolved* low band of the
    previous level, so the 1x1 convs are taps off the cascade, not part of it.
    """

    def __init__(self, in_channels: int, cfg: PyramidConfig, *, filters: Optional[FilterPair] = None,
                 rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        if cfg.variant != "lfp":
            raise ConfigError(f"LfpPyramid needs an 'lfp' config; got {cfg.variant!r}")
        if sum(cfg.level_channels) != in_channels:
            raise ConfigError(
                f"LfpPyramid: level channels {cfg.level_channels} sum to {sum(cfg.level_channels)}, "
                f"but must sum to the input channels ({in_channels}) for the concat addition"
            )
        self.cfg = cfg
        self.in_channels = in_channels
        self.filters = filters if filters is not None else haar_filters()
        self.level_convs = LayerList([
            Conv2d(in_channels, width, 1, rng=rng, dtype=dtype) for width in cfg.level_channels
        ])
        self.proj = Conv2d(in_channels, cfg.out_channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor4, training: bool = False) -> Tensor4:
        _check_pyramid_input("LfpPyramid", x, self.in_channels, self.cfg.levels)
        branches = []
        ll = x
        for k, conv in enumerate(self.level_convs, start=1):
            ll = dwt2_single(ll, self.filters).y_ll
            branches.append(ops.bilinear_upsample(conv.forward(ll, training), 2**k))
        merged = ops.add(ops.concat_channels(branches), x)
        return self.proj.forward(merged, training)


class FfcPyramid(Layer):
    """Full-frequency composition: a miniature encoder-decoder over the input.

    Descend: analyze the running feature, convolve its low-low band (width
    preserved), cache the high bands, and feed the *convolved* low band to the
    next analysis. Ascend: starting from the deepest conv output, synthesize
    with each level's cached highs, adding the same-resolution descending conv
    output before each synthesis (the deepest level starts the ascent bare).
    Finally add the pyramid input and project.
    """

    def __init__(self, in_channels: int, cfg: PyramidConfig, *, filters: Optional[FilterPair] = None,
                 rng: np.random.Generator, dtype: str = "f32"):
        super().__init__()
        if cfg.variant != "ffc":
            raise ConfigError(f"FfcPyramid needs an 'ffc' config; got {cfg.variant!r}")
        if any(width != in_channels for width in cfg.level_channels):
            raise ConfigError(
                f"FfcPyramid: every level width must equal the input channels ({in_channels}); "
                f"got {cfg.level_channels}"
            )
        self.cfg = cfg
        self.in_channels = in_channels
        self.filters = filters if filters is not None else haar_filters()
        self.level_convs = LayerList([
            Conv2d(in_channels, in_channels, 1, rng=rng, dtype=dtype) for _ in range(cfg.levels)
        ])
        self.proj = Conv2d(in_channels, cfg.out_channels, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor4, training: bool = False, *, _disable_level_skips: bool = False,
                _return_preprojection: bool = False) -> Tensor4:
        # The underscore knobs exist for the verification suite: with identity
        # level convs and skips disabled the pre-projection output must equal
        # the input exactly (perfect-reconstruction composition).
        _check_pyramid_input("FfcPyramid", x, self.in_channels, self.cfg.levels)
        highs = []
        conv_outs = []
        cur = x
        for conv in self.level_convs:
            bands = dwt2_single(cur, self.filters)
            highs.append(bands.highs)
            cur = conv.forward(bands.y_ll, training)
            conv_outs.append(cur)
        asc = conv_outs[-1]
        for k in range(self.cfg.levels - 1, -1, -1):
            low = asc if (k == self.cfg.levels - 1 or _disable_level_skips) else ops.add(conv_outs[k], asc)
            asc = idwt2_single(SubbandSet(low, *highs[k]), self.filters)
        pre = asc if _disable_level_skips else ops.add(asc, x)
        if _return_preprojection:
            return pre
        return self.proj.forward(pre, training)
