"""Trainable parameters and the AdamW update used for all runs.

Update rule: global gradient-norm clipping first, then bias-corrected
decoupled AdamW with linear learning-rate warmup (factor min(1, t/warmup)).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor

ADAM_EPS = 1e-8


class Parameter:
    """A leaf tensor plus its gradient accumulator and AdamW state."""

    def __init__(self, data, name: str = "param", dtype=np.float32):
        self.tensor = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        if self.tensor.grad is None:
            return np.zeros_like(self.tensor.data)
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.tensor.shape})"


def global_grad_norm(params: Sequence[Parameter]) -> float:
    total = 0.0
    for p in params:
        g = p.tensor.grad
        if g is not None:
            total += float((g.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def adamw_step(params: Sequence[Parameter], lr: float,
               betas: tuple[float, float] = (0.9, 0.95),
               weight_decay: float = 0.0, warmup_steps: int = 100,
               clip: float = 1.0) -> float:
    """One optimizer step over ``params``; returns the pre-clip grad norm.

    A missing gradient counts as zero, so a parameter never touched by the
    loss keeps zero moments and stays exactly unchanged (weight decay 0).
    """
    norm = global_grad_norm(params)
    scale = 1.0
    if clip > 0.0 and norm > clip:
        scale = clip / norm
    b1, b2 = betas
    for p in params:
        p.step_count += 1
        t = p.step_count
        warm = min(1.0, t / warmup_steps) if warmup_steps > 0 else 1.0
        lr_t = lr * warm
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.tensor.data)
        g = g * p.tensor.data.dtype.type(scale)
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * (g * g)
        m_hat = p.m / (1.0 - b1 ** t)
        v_hat = p.v / (1.0 - b2 ** t)
        if weight_decay != 0.0:
            p.tensor.data -= lr_t * weight_decay * p.tensor.data
        p.tensor.data -= lr_t * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return norm


def zero_grads(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()
