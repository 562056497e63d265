"""Resampling, padding, cropping and smoothing kernels.

Conventions (they matter, the fixture corpus pins them):
  * bilinear: half-pixel source mapping src = (i+0.5)*in/out - 0.5, edge
    clamped; downscale with antialias uses the normalized triangle filter
    widened by the scale factor (the PIL/torch convention). Antialias is a
    no-op on upscale.
  * nearest: legacy src = floor(i*in/out), used on target paths only.
  * gaussian_smooth: separable normalized kernel, reflect boundary,
    adaptive sizing ksize' = min(ksize, largest odd <= min(h, w)) with
    sigma' = sigma * ksize'/ksize.

Functions accept 2-D [H,W] or 3-D [C,H,W] arrays. Passing a tape Tensor
makes the resampling/crop/pad/normalize paths differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError

ArrayOrTensor = Union[np.ndarray, T.Tensor]


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = 7.0
    ksize: int = 31

    def __post_init__(self):
        if self.ksize < 1 or self.ksize % 2 == 0:
            raise ConfigError(f"gaussian ksize must be odd and >= 1, got {self.ksize}")
        if self.sigma <= 0:
            raise ConfigError(f"gaussian sigma must be > 0, got {self.sigma}")


# ---------------------------------------------------------------------------
# weight construction
# ---------------------------------------------------------------------------

@lru_cache(maxsize=512)
def bilinear_weights(in_size: int, out_size: int, antialias: bool) -> np.ndarray:
    """Dense [out_size, in_size] row-stochastic resampling matrix (float64)."""
    if in_size < 1 or out_size < 1:
        raise ConfigError(f"resize extents must be >= 1, got {in_size}->{out_size}")
    w = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    if antialias and scale > 1.0:
        support = scale  # triangle support 1.0 widened by the scale factor
        for i in range(out_size):
            center = (i + 0.5) * scale
            xmin = max(int(center - support + 0.5), 0)
            xmax = min(int(center + support + 0.5), in_size)
            taps = np.arange(xmin, xmax, dtype=np.float64)
            vals = np.maximum(0.0, 1.0 - np.abs((taps + 0.5 - center) / scale))
            w[i, xmin:xmax] = vals / vals.sum()
    else:
        for i in range(out_size):
            src = max((i + 0.5) * scale - 0.5, 0.0)
            x0 = int(math.floor(src))
            x1 = min(x0 + 1, in_size - 1)
            lam = src - x0
            w[i, x0] += 1.0 - lam
            w[i, x1] += lam
    return w


@lru_cache(maxsize=512)
def nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    if in_size < 1 or out_size < 1:
        raise ConfigError(f"resize extents must be >= 1, got {in_size}->{out_size}")
    idx = np.floor(np.arange(out_size) * (in_size / out_size)).astype(np.int64)
    return np.minimum(idx, in_size - 1)


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    x = np.arange(ksize, dtype=np.float64) - (ksize - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def adapt_gaussian(spec: GaussianSpec, h: int, w: int) -> GaussianSpec:
    """Shrink the kernel for small grids, scaling sigma with it."""
    bound = min(h, w)
    k = min(spec.ksize, bound if bound % 2 == 1 else bound - 1)
    k = max(k, 1)
    if k == spec.ksize:
        return spec
    return GaussianSpec(sigma=spec.sigma * k / spec.ksize, ksize=k)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def _rank_in(m: ArrayOrTensor):
    nd = m.data.ndim if isinstance(m, T.Tensor) else m.ndim
    if nd == 2:
        return m, True
    if nd == 3:
        return m, False
    raise ContractError(f"expected a 2-D or 3-D grid, got rank {nd}")


def _to3(m: ArrayOrTensor, squeeze: bool):
    if not squeeze:
        return m
    if isinstance(m, T.Tensor):
        return T.reshape(m, (1,) + m.shape)
    return m[None]


def _from3(m: ArrayOrTensor, squeeze: bool):
    if not squeeze:
        return m
    if isinstance(m, T.Tensor):
        return T.reshape(m, m.shape[1:])
    return m[0]


def _hw(m: ArrayOrTensor):
    s = m.shape
    return (s[-2], s[-1])


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def bilinear_resize(m: ArrayOrTensor, out_h: int, out_w: int,
                    antialias: bool = False) -> ArrayOrTensor:
    """Separable bilinear resize; differentiable when given a Tensor."""
    m, squeeze = _rank_in(m)
    h, w = _hw(m)
    m3 = _to3(m, squeeze)
    if isinstance(m3, T.Tensor):
        dt = m3.dtype
        wh = bilinear_weights(h, out_h, antialias).astype(dt)
        ww = bilinear_weights(w, out_w, antialias).astype(dt)
        x = m3.data
        out = np.matmul(wh, np.matmul(x, ww.T))

        def bwd(g):
            return (np.matmul(wh.T, np.matmul(g, ww)),)

        res = T.record(out, (m3,), bwd)
    else:
        x = m3 if m3.dtype.kind == "f" else np.asarray(m3, dtype=np.float64)
        wh = bilinear_weights(h, out_h, antialias).astype(x.dtype, copy=False)
        ww = bilinear_weights(w, out_w, antialias).astype(x.dtype, copy=False)
        res = np.matmul(wh, np.matmul(x, ww.T))
    return _from3(res, squeeze)


def nearest_resize(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize (target path only, not differentiated)."""
    if isinstance(m, T.Tensor):
        raise ContractError("nearest_resize is a target-path op; pass an array")
    m, squeeze = _rank_in(m)
    h, w = _hw(m)
    m3 = _to3(m, squeeze)
    out = m3[:, nearest_indices(h, out_h)][:, :, nearest_indices(w, out_w)]
    return _from3(np.ascontiguousarray(out), squeeze)


def crop_top_left(m: ArrayOrTensor, out_h: int, out_w: int) -> ArrayOrTensor:
    m, squeeze = _rank_in(m)
    h, w = _hw(m)
    if out_h > h or out_w > w:
        raise ContractError(f"crop {out_h}x{out_w} exceeds source {h}x{w}")
    m3 = _to3(m, squeeze)
    if isinstance(m3, T.Tensor):
        x = m3.data

        def bwd(g):
            full = np.zeros_like(x)
            full[:, :out_h, :out_w] = g
            return (full,)

        res = T.record(np.ascontiguousarray(x[:, :out_h, :out_w]), (m3,), bwd)
    else:
        res = np.ascontiguousarray(m3[:, :out_h, :out_w])
    return _from3(res, squeeze)


def pad_bottom_right_zero(m: ArrayOrTensor, out_h: int, out_w: int) -> ArrayOrTensor:
    m, squeeze = _rank_in(m)
    h, w = _hw(m)
    if out_h < h or out_w < w:
        raise ContractError(f"pad target {out_h}x{out_w} smaller than source {h}x{w}")
    m3 = _to3(m, squeeze)
    if isinstance(m3, T.Tensor):
        x = m3.data
        full = np.zeros((x.shape[0], out_h, out_w), dtype=x.dtype)
        full[:, :h, :w] = x
        res = T.record(full, (m3,), lambda g: (g[:, :h, :w],))
    else:
        res = np.zeros((m3.shape[0], out_h, out_w), dtype=m3.dtype)
        res[:, :h, :w] = m3
    return _from3(res, squeeze)


def scaled_long_side(h: int, w: int, target: int) -> tuple[int, int]:
    """Round-half-up extents after scaling the long side to ``target``."""
    alpha = target / max(h, w)
    return int(math.floor(h * alpha + 0.5)), int(math.floor(w * alpha + 0.5))


def resize_long_side_pad(m: ArrayOrTensor, target: int, antialias: bool = True):
    """Scale the long side to ``target``, zero-pad bottom/right to square.

    Returns (map, h', w') so callers can unpad later.
    """
    h, w = _hw(m)
    hs, ws = scaled_long_side(h, w, target)
    resized = bilinear_resize(m, hs, ws, antialias=antialias)
    return pad_bottom_right_zero(resized, target, target), hs, ws


# ---------------------------------------------------------------------------
# smoothing / normalization
# ---------------------------------------------------------------------------

def gaussian_smooth(m: np.ndarray, spec: GaussianSpec) -> np.ndarray:
    """Separable gaussian with reflect boundary (target path, numpy-only)."""
    if isinstance(m, T.Tensor):
        raise ContractError("gaussian_smooth is a target-path op; pass an array")
    m, squeeze = _rank_in(m)
    h, w = _hw(m)
    eff = adapt_gaussian(spec, h, w)
    m3 = _to3(np.asarray(m, dtype=np.float64), squeeze)
    if eff.ksize == 1:
        return _from3(m3.copy(), squeeze)
    g = gaussian_kernel1d(eff.sigma, eff.ksize)
    r = eff.ksize // 2
    pad = np.pad(m3, ((0, 0), (r, r), (r, r)), mode="reflect")
    tmp = np.zeros_like(m3)
    for t in range(eff.ksize):
        tmp += g[t] * pad[:, r:r + h, t:t + w]
    pad2 = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="reflect")
    out = np.zeros_like(m3)
    for t in range(eff.ksize):
        out += g[t] * pad2[:, t:t + h, :]
    return _from3(out, squeeze)


def minmax_normalize(v: ArrayOrTensor, eps: float = 1e-8) -> ArrayOrTensor:
    """(v - min)/(max - min + eps); constant input maps to all zeros."""
    if isinstance(v, T.Tensor):
        return T.minmax_normalize(v, eps)
    v = np.asarray(v)
    lo, hi = v.min(), v.max()
    return (v - lo) / (hi - lo + v.dtype.type(eps))
