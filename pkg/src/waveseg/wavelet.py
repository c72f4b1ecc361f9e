"""Channelwise 2-D discrete wavelet transform and its exact inverse.

A single analysis level splits an even-sized feature map into four half
resolution subbands by stride-2 separable filtering:

    y[i, j] = sum_{u, v} x[2i + u, 2j + v] * f_row[u] * f_col[v]

with (f_row, f_col) drawn from the analysis low/high-pass pair, giving the
ll, lh, hl and hh bands (second letter = along-width filter). Synthesis
places each coefficient back as a 2x2 outer-product block of the synthesis
filters, which for length-2 filters makes boundary handling vacuous: blocks
never overlap. Only length-2 filters are accepted; filter validity is
certified numerically by a round-trip check at construction.

The Haar pair is the validated default. Its low-low band coincides exactly
with 2x2 stride-2 average pooling, and its synthesis filters are twice the
analysis ones, so reconstruction is a plain sum of Kronecker products.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor4, check_same_dtype, record


@dataclass(frozen=True)
class FilterPair:
    """Bi-orthogonal length-2 analysis/synthesis filter quadruple.

    Construction runs a numeric perfect-reconstruction check (f64 round-trip
    error <= 1e-12 on fixed pseudo-random data) unless ``validate=False``,
    which exists only so verification suites can inject broken filters.
    """

    phi: tuple[float, float]
    psi: tuple[float, float]
    phi_syn: tuple[float, float]
    psi_syn: tuple[float, float]
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        for name in ("phi", "psi", "phi_syn", "psi_syn"):
            taps = getattr(self, name)
            if len(taps) != 2:
                raise ConfigError(f"FilterPair: {name} must have exactly 2 taps; got {len(taps)}")
            object.__setattr__(self, name, (float(taps[0]), float(taps[1])))
        if validate:
            rng = np.random.default_rng(20240229)
            x = Tensor4(rng.standard_normal((2, 3, 8, 10)), dtype="f64")
            rec = idwt2_single(dwt2_single(x, self), self)
            err = float(np.abs(rec.data - x.data).max())
            if err > 1e-12:
                raise ConfigError(
                    f"FilterPair is not perfect-reconstruction: round-trip error {err:.3e} > 1e-12"
                )


_HAAR: Optional[FilterPair] = None


def haar_filters() -> FilterPair:
    """The Haar pair: phi=(1/2, 1/2), psi=(1/2, -1/2), synthesis doubled."""
    global _HAAR
    if _HAAR is None:
        _HAAR = FilterPair(phi=(0.5, 0.5), psi=(0.5, -0.5), phi_syn=(1.0, 1.0), psi_syn=(1.0, -1.0))
    return _HAAR


@dataclass
class SubbandSet:
    """The four same-shaped coefficient tensors of one analysis level."""

    y_ll: Tensor4
    y_lh: Tensor4
    y_hl: Tensor4
    y_hh: Tensor4

    def __post_init__(self):
        dims = self.y_ll.dims
        for name in ("y_lh", "y_hl", "y_hh"):
            got = getattr(self, name).dims
            if got != dims:
                raise ShapeError(f"SubbandSet: {name} dims {got} != y_ll dims {dims}")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.y_ll.dims

    @property
    def highs(self) -> tuple[Tensor4, Tensor4, Tensor4]:
        return self.y_lh, self.y_hl, self.y_hh


@dataclass
class WaveletStack:
    """Cascade output: per-level subbands from finest to coarsest."""

    levels: list[SubbandSet]
    coarsest_ll: Tensor4 = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.levels:
            raise ShapeError("WaveletStack: needs at least one level")
        if self.coarsest_ll is None:
            self.coarsest_ll = self.levels[-1].y_ll
        for k in range(1, len(self.levels)):
            prev, cur = self.levels[k - 1].dims, self.levels[k].dims
            if cur[:2] != prev[:2] or cur[2] * 2 != prev[2] or cur[3] * 2 != prev[3]:
                raise ShapeError(f"WaveletStack: level {k} dims {cur} are not half of level {k - 1} dims {prev}")
        if self.coarsest_ll.dims != self.levels[-1].dims:
            raise ShapeError(
                f"WaveletStack: coarsest_ll dims {self.coarsest_ll.dims} != deepest level dims {self.levels[-1].dims}"
            )


def dwt2_single(x: Tensor4, filters: Optional[FilterPair] = None) -> SubbandSet:
    """One analysis level applied independently per channel.

    Requires even spatial dims; no implicit padding is performed.
    """
    f = filters if filters is not None else haar_filters()
    n, c, h, w = x.dims
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2_single: spatial dims {h}x{w} must be even (no implicit padding)")
    p0, p1 = f.phi
    q0, q1 = f.psi
    a = x.data[:, :, 0::2, 0::2]
    b = x.data[:, :, 0::2, 1::2]
    cc = x.data[:, :, 1::2, 0::2]
    d = x.data[:, :, 1::2, 1::2]
    low_r0 = p0 * a + p1 * b
    high_r0 = q0 * a + q1 * b
    low_r1 = p0 * cc + p1 * d
    high_r1 = q0 * cc + q1 * d
    y_ll = Tensor4(p0 * low_r0 + p1 * low_r1)
    y_lh = Tensor4(p0 * high_r0 + p1 * high_r1)
    y_hl = Tensor4(q0 * low_r0 + q1 * low_r1)
    y_hh = Tensor4(q0 * high_r0 + q1 * high_r1)

    def vjp(out_grads):
        gll, glh, ghl, ghh = (
            g if g is not None else np.zeros(y_ll.dims, dtype=x.data.dtype) for g in out_grads
        )
        g_low_r0 = p0 * gll + q0 * ghl
        g_high_r0 = p0 * glh + q0 * ghh
        g_low_r1 = p1 * gll + q1 * ghl
        g_high_r1 = p1 * glh + q1 * ghh
        gx = np.empty(x.dims, dtype=x.data.dtype)
        gx[:, :, 0::2, 0::2] = p0 * g_low_r0 + q0 * g_high_r0
        gx[:, :, 0::2, 1::2] = p1 * g_low_r0 + q1 * g_high_r0
        gx[:, :, 1::2, 0::2] = p0 * g_low_r1 + q0 * g_high_r1
        gx[:, :, 1::2, 1::2] = p1 * g_low_r1 + q1 * g_high_r1
        return (gx,)

    record("dwt2_single", (x,), (y_ll, y_lh, y_hl, y_hh), vjp)
    return SubbandSet(y_ll, y_lh, y_hl, y_hh)


def idwt2_single(s: SubbandSet, filters: Optional[FilterPair] = None) -> Tensor4:
    """Exact inverse of :func:`dwt2_single` for a bi-orthogonal filter pair.

    Each output 2x2 block is the Kronecker-style combination
    ll*P[r]P[s] + lh*P[r]Q[s] + hl*Q[r]P[s] + hh*Q[r]Q[s] with synthesis
    filters P, Q and (r, s) the offsets within the block.
    """
    f = filters if filters is not None else haar_filters()
    check_same_dtype("idwt2_single", s.y_ll, s.y_lh, s.y_hl, s.y_hh)
    n, c, h, w = s.dims
    P0, P1 = f.phi_syn
    Q0, Q1 = f.psi_syn
    ll, lh, hl, hh = s.y_ll.data, s.y_lh.data, s.y_hl.data, s.y_hh.data
    out = np.empty((n, c, 2 * h, 2 * w), dtype=ll.dtype)
    low_r0 = P0 * ll + Q0 * hl
    high_r0 = P0 * lh + Q0 * hh
    low_r1 = P1 * ll + Q1 * hl
    high_r1 = P1 * lh + Q1 * hh
    out[:, :, 0::2, 0::2] = P0 * low_r0 + Q0 * high_r0
    out[:, :, 0::2, 1::2] = P1 * low_r0 + Q1 * high_r0
    out[:, :, 1::2, 0::2] = P0 * low_r1 + Q0 * high_r1
    out[:, :, 1::2, 1::2] = P1 * low_r1 + Q1 * high_r1
    x = Tensor4(out)

    def vjp(out_grads):
        (gx,) = out_grads
        ga = gx[:, :, 0::2, 0::2]
        gb = gx[:, :, 0::2, 1::2]
        gc = gx[:, :, 1::2, 0::2]
        gd = gx[:, :, 1::2, 1::2]
        g_low_r0 = P0 * ga + P1 * gb
        g_high_r0 = Q0 * ga + Q1 * gb
        g_low_r1 = P0 * gc + P1 * gd
        g_high_r1 = Q0 * gc + Q1 * gd
        gll = P0 * g_low_r0 + P1 * g_low_r1
        glh = P0 * g_high_r0 + P1 * g_high_r1
        ghl = Q0 * g_low_r0 + Q1 * g_low_r1
        ghh = Q0 * g_high_r0 + Q1 * g_high_r1
        return gll, glh, ghl, ghh

    record("idwt2_single", (s.y_ll, s.y_lh, s.y_hl, s.y_hh), (x,), vjp)
    return x


def dwt2_multi(x: Tensor4, levels: int, filters: Optional[FilterPair] = None) -> WaveletStack:
    """Cascade: re-analyze the low-low band ``levels`` times, finest first."""
    if levels < 1:
        raise ConfigError(f"dwt2_multi: levels must be >= 1; got {levels}")
    n, c, h, w = x.dims
    div = 2**levels
    if h % div or w % div:
        for k in range(1, levels + 1):
            if h % (2**k) or w % (2**k):
                raise ShapeError(
                    f"dwt2_multi: spatial dims {h}x{w} not divisible by {2 ** k} as required for level {k}"
                )
    out: list[SubbandSet] = []
    cur = x
    for _ in range(levels):
        s = dwt2_single(cur, filters)
        out.append(s)
        cur = s.y_ll
    return WaveletStack(levels=out, coarsest_ll=cur)


def idwt2_multi(stack: WaveletStack, filters: Optional[FilterPair] = None) -> Tensor4:
    """Reconstruct from coarse to fine, inverting :func:`dwt2_multi` exactly."""
    cur = stack.coarsest_ll
    for s in reversed(stack.levels):
        cur = idwt2_single(SubbandSet(cur, s.y_lh, s.y_hl, s.y_hh), filters)
    return cur
