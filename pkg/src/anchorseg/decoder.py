"""Miniature query-conditioned mask decoder.

Two two-way blocks of single-head attention: queries attend over pixels,
pixels attend over queries (residual adds), then a two-layer feed-forward
on the queries. Pixels carry a fixed 2-D sinusoidal code (attention over
pixels is permutation-blind without it). The mask logit is the per-pixel
dot product with the transformed anchor slot, bilinearly upsampled to the
image extents; final masks threshold the logits at 0 (sigmoid 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import imaging as I
from . import tensor as T
from .errors import ContractError
from .optim import Parameter

N_BLOCKS = 2
FFN_MULT = 2


@dataclass
class AttnParams:
    wq: Parameter
    wk: Parameter
    wv: Parameter


@dataclass
class BlockParams:
    q2p: AttnParams
    p2q: AttnParams
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter


@dataclass
class DecoderParams:
    query_w: Parameter   # [d, C]
    query_b: Parameter
    blocks: list[BlockParams]
    out_w: Parameter     # [C, C] transform of the anchor slot
    out_b: Parameter


def init_decoder(rng: np.random.Generator, d: int, c: int,
                 dtype=np.float32) -> DecoderParams:
    def mat(shape, fan):
        return rng.normal(0.0, 1.0 / np.sqrt(fan), size=shape)

    def attn(tag):
        return AttnParams(
            wq=Parameter(mat((c, c), c), f"{tag}.wq", dtype),
            wk=Parameter(mat((c, c), c), f"{tag}.wk", dtype),
            wv=Parameter(mat((c, c), c), f"{tag}.wv", dtype),
        )

    blocks = []
    cf = FFN_MULT * c
    for i in range(N_BLOCKS):
        tag = f"decoder.block{i}"
        blocks.append(BlockParams(
            q2p=attn(f"{tag}.q2p"),
            p2q=attn(f"{tag}.p2q"),
            ffn_w1=Parameter(mat((c, cf), c), f"{tag}.ffn_w1", dtype),
            ffn_b1=Parameter(np.zeros(cf), f"{tag}.ffn_b1", dtype),
            ffn_w2=Parameter(mat((cf, c), cf), f"{tag}.ffn_w2", dtype),
            ffn_b2=Parameter(np.zeros(c), f"{tag}.ffn_b2", dtype),
        ))
    return DecoderParams(
        query_w=Parameter(mat((d, c), d), "decoder.query_w", dtype),
        query_b=Parameter(np.zeros(c), "decoder.query_b", dtype),
        blocks=blocks,
        out_w=Parameter(mat((c, c), c), "decoder.out_w", dtype),
        out_b=Parameter(np.zeros(c), "decoder.out_b", dtype),
    )


@lru_cache(maxsize=32)
def pixel_position_code(h: int, w: int, c: int, dtype_name: str) -> np.ndarray:
    return T.sinusoidal_codes_2d(h, w, c, dtype=np.dtype(dtype_name))


def _attend(target: T.Tensor, source: T.Tensor, p: AttnParams,
            inv_sqrt_c: float) -> T.Tensor:
    """target <- target + softmax(target Wq (source Wk)^T / sqrt(C)) source Wv."""
    q = T.matmul(target, p.wq.tensor)
    k = T.matmul(source, p.wk.tensor)
    v = T.matmul(source, p.wv.tensor)
    attn = T.softmax_rows(T.scale_add(T.matmul(q, T.transpose2d(k)), inv_sqrt_c))
    return T.add(target, T.matmul(attn, v))


def decode_conditioned(features: T.Tensor, queries: T.Tensor,
                       out_hw: tuple[int, int], params: DecoderParams) -> T.Tensor:
    """Mask logits [h, w] from conditioned features [C,H,W] and queries [K+1,d].

    The anchor query must be the last row; only its slot feeds the output
    head (contextual slots influence the result through attention).
    """
    if queries.data.ndim != 2 or queries.shape[0] < 1:
        raise ContractError(f"queries must be a non-empty [K+1, d] matrix, got {queries.shape}")
    c, hh, ww = features.shape
    inv = 1.0 / math.sqrt(c)
    q = T.add_row_bias(T.matmul(queries, params.query_w.tensor), params.query_b.tensor)
    p = T.transpose2d(T.reshape(features, (c, hh * ww)))
    pos = T.Tensor(pixel_position_code(hh, ww, c, features.dtype.name))
    p = T.add(p, pos)
    for blk in params.blocks:
        q = _attend(q, p, blk.q2p, inv)
        p = _attend(p, q, blk.p2q, inv)
        ff = T.add_row_bias(T.matmul(
            T.relu(T.add_row_bias(T.matmul(q, blk.ffn_w1.tensor), blk.ffn_b1.tensor)),
            blk.ffn_w2.tensor), blk.ffn_b2.tensor)
        q = T.add(q, ff)
    anchor = T.take_row(q, queries.shape[0] - 1)
    anchor = T.reshape(anchor, (1, c))
    anchor = T.add_row_bias(T.matmul(anchor, params.out_w.tensor), params.out_b.tensor)
    logits = T.reshape(T.matmul(p, T.transpose2d(anchor)), (hh, ww))
    return I.bilinear_resize(logits, out_hw[0], out_hw[1])


def decode_vanilla(features: T.Tensor, q_seg: T.Tensor,
                   out_hw: tuple[int, int], params: DecoderParams) -> T.Tensor:
    """Single-query baseline: the same decoder on a one-row query matrix."""
    return decode_conditioned(features, T.reshape(q_seg, (1, q_seg.shape[0])),
                              out_hw, params)
