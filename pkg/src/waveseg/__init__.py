"""Wavelet encoder-decoder networks for dense pixelwise prediction.

The package provides exact multi-resolution Haar analysis/synthesis
operators, parameter-free wavelet unpooling, two wavelet context pyramids,
the five-model family built from them, and a desk-scale training/evaluation
pipeline, all on a small NCHW tensor engine with reverse-mode autodiff.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    ShapeError,
    WavesegError,
)
from .tensor import Tape, Tensor4, backward
from .ops import ConvParams, bilinear_resize, bilinear_upsample, conv2d, transposed_conv2d
from .wavelet import (
    FilterPair,
    SubbandSet,
    WaveletStack,
    dwt2_multi,
    dwt2_single,
    haar_filters,
    idwt2_multi,
    idwt2_single,
)
from .layers import (
    FfcPyramid,
    LfpPyramid,
    PyramidConfig,
    ResidualBlock,
    TransposedUnpool,
    UnpoolInputs,
    UpconvBlock,
    WaveletUnpool,
    wavelet_unpool,
)
from .models import ModelConfig, NetworkGraph, VARIANTS, build_model, param_count, shape_trace
from .training import LossConfig, OptimConfig, bootstrap_ce, cross_entropy, lr_at, sgd_momentum_step, train
from .data import SegmentationSample, load_dataset, save_dataset, synth_generate
from .evaluation import ConfusionMatrix, class_frequency, evaluate, export_colormap, iou_scores, ms_tta_predict
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .estimator import HaarWaveletTransform, WaveletSegmenter

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "ConfusionMatrix",
    "ConvParams",
    "DataError",
    "DivergenceError",
    "FfcPyramid",
    "FilterPair",
    "HaarWaveletTransform",
    "LfpPyramid",
    "LossConfig",
    "ModelConfig",
    "NetworkGraph",
    "OptimConfig",
    "PyramidConfig",
    "ResidualBlock",
    "RunConfig",
    "SegmentationSample",
    "ShapeError",
    "SubbandSet",
    "Tape",
    "Tensor4",
    "TransposedUnpool",
    "UnpoolInputs",
    "UpconvBlock",
    "VARIANTS",
    "WaveletSegmenter",
    "WaveletStack",
    "WaveletUnpool",
    "WavesegError",
    "backward",
    "bilinear_resize",
    "bilinear_upsample",
    "bootstrap_ce",
    "build_model",
    "class_frequency",
    "conv2d",
    "cross_entropy",
    "dump_config",
    "dwt2_multi",
    "dwt2_single",
    "evaluate",
    "export_colormap",
    "haar_filters",
    "idwt2_multi",
    "idwt2_single",
    "iou_scores",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "lr_at",
    "ms_tta_predict",
    "param_count",
    "save_checkpoint",
    "save_dataset",
    "sgd_momentum_step",
    "shape_trace",
    "synth_generate",
    "train",
    "transposed_conv2d",
    "wavelet_unpool",
]
