"""AdamW: closed-form single step, warmup, clipping, no-op cases."""

import numpy as np
import pytest

from anchorseg import tensor as T
from anchorseg.optim import ADAM_EPS, Parameter, adamw_step, global_grad_norm


def test_zero_gradient_leaves_parameter_unchanged():
    p = Parameter(np.array([1.0, -2.0]), "p", dtype=np.float64)
    before = p.data.copy()
    adamw_step([p], lr=1e-3, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, before)


def test_single_step_closed_form():
    # step 1, g=1, warmup 100: m_hat = 1, v_hat = 1 -> delta = (lr/100)/(1+eps)
    p = Parameter(np.array([0.0]), "p", dtype=np.float64)
    p.tensor.grad = np.array([1.0])
    adamw_step([p], lr=3e-4, betas=(0.9, 0.95), warmup_steps=100, clip=1.0)
    expected = (3e-4 / 100) / (1.0 + ADAM_EPS)
    assert p.data[0] == pytest.approx(-expected, rel=1e-12)


def test_gradient_norm_clipping_scale():
    # norm 10 with clip 1.0 -> effective gradient scaled by 0.1
    p = Parameter(np.zeros(4), "p", dtype=np.float64)
    p.tensor.grad = np.full(4, 5.0)  # norm = 10
    assert global_grad_norm([p]) == pytest.approx(10.0)
    adamw_step([p], lr=1e-2, warmup_steps=1, clip=1.0)
    # all entries identical; scaled g = 0.5 -> m_hat/v_hat bias-corrected to
    # 0.5/0.5 -> unit update direction times lr
    assert np.allclose(p.data, p.data[0])
    assert p.data[0] == pytest.approx(-1e-2 * 0.5 / (0.5 + ADAM_EPS), rel=1e-9)


def test_warmup_is_linear_in_steps():
    deltas = []
    for steps in (1, 2):
        p = Parameter(np.array([0.0]), "p", dtype=np.float64)
        for s in range(steps):
            p.tensor.grad = np.array([1.0])
            adamw_step([p], lr=1e-2, betas=(0.0, 0.0), warmup_steps=4, clip=0.0)
        deltas.append(-p.data[0])
    # betas 0 makes every update lr_t * sign(g); lr_t = lr * t/4
    assert deltas[0] == pytest.approx(1e-2 * 0.25, rel=1e-6)
    assert deltas[1] == pytest.approx(1e-2 * (0.25 + 0.5), rel=1e-6)


def test_decoupled_weight_decay():
    p = Parameter(np.array([2.0]), "p", dtype=np.float64)
    p.tensor.grad = np.array([0.0])
    adamw_step([p], lr=0.1, weight_decay=0.5, warmup_steps=1, clip=0.0)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_training_reduces_quadratic_loss():
    p = Parameter(np.array([3.0, -2.0]), "p", dtype=np.float64)
    for _ in range(200):
        p.zero_grad()
        with T.Tape():
            loss = T.tsum(T.mul(p.tensor, p.tensor))
            T.backward(loss)
        adamw_step([p], lr=5e-2, warmup_steps=10)
    assert np.abs(p.data).max() < 0.2
