"""Cycle-consistency and mask losses.

The token responses S bridge two supervision resolutions: upsampled to the
image grid they are matched against a Gaussian-softened mask (token->mask),
and the softened mask pulled down to the token grid supervises S directly
(mask->token). Targets are plain arrays, never on the tape, so no gradient
reaches them. The mask->token operand is the min-max-normalized response
vector (the same normalization the prior path uses).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imaging as I
from . import tensor as T
from .errors import ContractError
from .grounding import token_grid_side

BCE_CLAMP = 1e-7
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    bce: float = 2.0
    dice: float = 4.0
    mask: float = 1.0
    tmcc: float = 1.0
    txt: float = 0.0

    def __post_init__(self):
        for name in ("bce", "dice", "mask", "tmcc", "txt"):
            if getattr(self, name) < 0:
                raise ContractError(f"loss weight {name} must be non-negative")


def soften_mask(mask: np.ndarray, spec: I.GaussianSpec) -> np.ndarray:
    """Gaussian-soften a binary mask (reflect boundary, adaptive kernel)."""
    return I.gaussian_smooth(np.asarray(mask, dtype=np.float64), spec)


def token_map_upsampled(raw: T.Tensor, h: int, w: int, l_vl: int) -> T.Tensor:
    """Token responses -> [0,1] map at image extents (differentiable)."""
    g = token_grid_side(raw.shape[0])
    normed = I.minmax_normalize(raw)
    grid = T.reshape(normed, (g, g))
    up = I.bilinear_resize(grid, l_vl, l_vl)
    hs, ws = I.scaled_long_side(h, w, l_vl)
    cropped = I.crop_top_left(up, hs, ws)
    return I.bilinear_resize(cropped, h, w)


def downsample_target(mask: np.ndarray, g: int, l_vl: int,
                      spec: I.GaussianSpec) -> np.ndarray:
    """Mask -> softened token-grid target, flattened row-major (no gradient)."""
    canvas, _, _ = I.resize_long_side_pad(np.asarray(mask, dtype=np.float64), l_vl,
                                          antialias=True)
    grid = I.nearest_resize(canvas, g, g)
    soft = I.gaussian_smooth(grid, spec)
    return soft.reshape(-1)


def bce_loss(p: T.Tensor, target: np.ndarray) -> T.Tensor:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1-1e-7]."""
    if p.shape != np.shape(target):
        raise ContractError(f"bce: prediction {p.shape} vs target {np.shape(target)}")
    t = T.Tensor(np.asarray(target, dtype=p.dtype))
    pc = T.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    one_minus_t = T.scale_add(t, -1.0, 1.0)
    one_minus_p = T.scale_add(pc, -1.0, 1.0)
    ll = T.add(T.mul(t, T.log(pc)), T.mul(one_minus_t, T.log(one_minus_p)))
    return T.scale_add(T.tmean(ll), -1.0)


def dice_loss(p: T.Tensor, target: np.ndarray, smooth: float = DICE_SMOOTH) -> T.Tensor:
    """1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth)."""
    if p.shape != np.shape(target):
        raise ContractError(f"dice: prediction {p.shape} vs target {np.shape(target)}")
    t = T.Tensor(np.asarray(target, dtype=p.dtype))
    inter = T.scale_add(T.tsum(T.mul(p, t)), 2.0, smooth)
    denom = T.scale_add(T.add(T.tsum(p), T.tsum(t)), 1.0, smooth)
    return T.scale_add(T.div(inter, denom), -1.0, 1.0)


def _bce_dice(p: T.Tensor, target: np.ndarray, weights: LossWeights) -> T.Tensor:
    return T.add(T.scale_add(bce_loss(p, target), weights.bce),
                 T.scale_add(dice_loss(p, target), weights.dice))


def loss_t2m(s_up: T.Tensor, m_soft: np.ndarray, weights: LossWeights) -> T.Tensor:
    return _bce_dice(s_up, m_soft, weights)


def loss_m2t(s_norm: T.Tensor, m_down: np.ndarray, weights: LossWeights) -> T.Tensor:
    if s_norm.shape != np.shape(m_down):
        raise ContractError(
            f"m2t: responses {s_norm.shape} vs target {np.shape(m_down)}")
    return _bce_dice(s_norm, m_down, weights)


def loss_tmcc(s_up: T.Tensor, m_soft: np.ndarray, s_norm: T.Tensor,
              m_down: np.ndarray, weights: LossWeights,
              use_t2m: bool = True, use_m2t: bool = True) -> T.Tensor:
    terms = []
    if use_t2m:
        terms.append(loss_t2m(s_up, m_soft, weights))
    if use_m2t:
        terms.append(loss_m2t(s_norm, m_down, weights))
    if not terms:
        return T.Tensor(np.zeros((), dtype=s_norm.dtype))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


def mask_loss(logits: T.Tensor, mask: np.ndarray, weights: LossWeights) -> T.Tensor:
    """bce+dice on sigmoid(logits) against the binary mask."""
    return _bce_dice(T.sigmoid(logits), np.asarray(mask, dtype=logits.dtype.type),
                     weights)


def loss_total(logits: T.Tensor, mask: np.ndarray, tmcc: T.Tensor | None,
               weights: LossWeights, external_txt_loss: float = 0.0) -> T.Tensor:
    """txt hook + weighted mask loss + weighted cycle-consistency loss."""
    total = T.scale_add(mask_loss(logits, mask, weights), weights.mask,
                        weights.txt * external_txt_loss)
    if tmcc is not None and weights.tmcc != 0.0:
        total = T.add(total, T.scale_add(tmcc, weights.tmcc))
    return total
