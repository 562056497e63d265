"""Anchor-similarity responses and their elevation to a spatial prior.

Pipeline for one anchor (the conditioning chain):
  raw responses -> min-max normalize -> reshape GxG -> bilinear to
  L_vl x L_vl -> crop to the aspect-aligned h'xw' -> bilinear back to
  h x w -> long-side resize + bottom/right zero pad to L_sam -> three-layer
  conv head (channels 1 -> 4 -> 16 -> C) -> prior P, added to the decoder
  features element-wise. Every intermediate shape is asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import imaging as I
from . import tensor as T
from .errors import ConfigError, ContractError
from .optim import Parameter

CONV_HEAD_CHANNELS = (1, 4, 16)  # fixed path, last layer brings it to C


@dataclass
class ConvHeadParams:
    weights: list[Parameter]  # three [Cout, Cin, 3, 3]
    biases: list[Parameter]
    strides: tuple[int, int, int]


def init_conv_head(rng: np.random.Generator, c_out: int,
                   strides: tuple[int, int, int], dtype=np.float32,
                   name: str = "conv_head") -> ConvHeadParams:
    chans = list(CONV_HEAD_CHANNELS) + [c_out]
    ws, bs = [], []
    for i in range(3):
        cin, cout = chans[i], chans[i + 1]
        fan = cin * 9
        ws.append(Parameter(rng.normal(0.0, 1.0 / np.sqrt(fan), size=(cout, cin, 3, 3)),
                            f"{name}.w{i}", dtype))
        bs.append(Parameter(np.zeros(cout), f"{name}.b{i}", dtype))
    return ConvHeadParams(weights=ws, biases=bs, strides=tuple(strides))


@dataclass
class FusionParams:
    """1x1 conv folding T concatenated priors back to C channels."""
    weight: Parameter  # [C, T*C, 1, 1]
    bias: Parameter

    @classmethod
    def identity(cls, c: int, t: int = 1, dtype=np.float32) -> "FusionParams":
        w = np.zeros((c, t * c, 1, 1))
        for i in range(c):
            w[i, i, 0, 0] = 1.0
        return cls(weight=Parameter(w, "fusion.w", dtype),
                   bias=Parameter(np.zeros(c), "fusion.b", dtype))


def token_grid_side(n: int) -> int:
    g = int(math.isqrt(n))
    if g * g != n:
        raise ContractError(f"token count {n} is not a perfect square")
    return g


def spatial_responses(image_tokens: T.Tensor, q_anc: T.Tensor) -> T.Tensor:
    """s_i = <token_i, anchor> for every image token -> [N]."""
    if image_tokens.shape[1] != q_anc.shape[0]:
        raise ContractError(
            f"token dim {image_tokens.shape[1]} != anchor dim {q_anc.shape[0]}")
    col = T.reshape(q_anc, (q_anc.shape[0], 1))
    return T.reshape(T.matmul(image_tokens, col), (-1,))


def apply_conv_head(x: T.Tensor, head: ConvHeadParams) -> T.Tensor:
    for i in range(3):
        x = T.conv2d(x, head.weights[i].tensor, head.biases[i].tensor,
                     stride=head.strides[i])
        if i < 2:
            x = T.relu(x)
    return x


def _expect(t, shape, line: str):
    got = t.shape if isinstance(t, T.Tensor) else np.shape(t)
    if tuple(got) != tuple(shape):
        raise ContractError(f"{line}: expected shape {shape}, got {got}")


def build_spatial_prior(raw: T.Tensor, h: int, w: int, l_vl: int, l_sam: int,
                        head: ConvHeadParams, return_intermediates: bool = False):
    """Run the conditioning chain from raw token responses to the prior P."""
    n = raw.shape[0]
    g = token_grid_side(n)
    normed = I.minmax_normalize(raw)
    grid = T.reshape(normed, (1, g, g))
    _expect(grid, (1, g, g), "reshape to token grid")
    up = I.bilinear_resize(grid, l_vl, l_vl)
    _expect(up, (1, l_vl, l_vl), "upsample to l_vl")
    hs, ws = I.scaled_long_side(h, w, l_vl)
    cropped = I.crop_top_left(up, hs, ws)
    _expect(cropped, (1, hs, ws), "aspect crop")
    restored = I.bilinear_resize(cropped, h, w)
    _expect(restored, (1, h, w), "restore to image extents")
    canvas, hs2, ws2 = I.resize_long_side_pad(restored, l_sam, antialias=True)
    _expect(canvas, (1, l_sam, l_sam), "square canvas for the conv head")
    prior = apply_conv_head(canvas, head)
    if return_intermediates:
        return prior, {
            "normalized": normed, "grid": grid, "upsampled": up,
            "crop_hw": (hs, ws), "restored": restored,
            "canvas": canvas, "canvas_hw": (hs2, ws2),
        }
    return prior


def inject_prior(f: T.Tensor, prior: T.Tensor) -> T.Tensor:
    if f.shape != prior.shape:
        raise ContractError(f"feature shape {f.shape} != prior shape {prior.shape}")
    return T.add(f, prior)


def fuse_multi_anchor(priors: Sequence[T.Tensor], fusion: FusionParams) -> T.Tensor:
    """Channel-concatenate per-anchor priors and fold with the 1x1 conv."""
    if len(priors) < 1:
        raise ContractError("fusion needs at least one prior")
    shape = priors[0].shape
    for p in priors[1:]:
        if p.shape != shape:
            raise ContractError(f"prior shapes differ: {shape} vs {p.shape}")
    if len(priors) == 1:
        stacked = priors[0]
    else:
        c, hh, ww = shape
        flat = [T.reshape(p, (c, hh * ww)) for p in priors]
        cat = flat[0]
        for nxt in flat[1:]:
            cat = T.reshape(
                T.concat_vec(T.reshape(cat, (-1,)), T.reshape(nxt, (-1,))),
                (cat.shape[0] + c, hh * ww))
        stacked = T.reshape(cat, (len(priors) * c, hh, ww))
    expected_in = fusion.weight.data.shape[1]
    if stacked.shape[0] != expected_in:
        raise ContractError(
            f"fusion expects {expected_in} input channels, got {stacked.shape[0]}")
    return T.conv2d(stacked, fusion.weight.tensor, fusion.bias.tensor, stride=1)
