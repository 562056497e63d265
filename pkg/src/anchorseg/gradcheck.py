"""Finite-difference verification suites.

Everything runs in float64 on miniature shapes. Each entry compares tape
gradients against central differences and reports the max relative error;
the negative control corrupts one backward rule and must FAIL loudly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import decoder as D
from . import grounding as Gr
from . import imaging as I
from . import model as Mo
from . import objectives as O
from . import querybank as Q
from . import tensor as T
from .config import tiny_config
from .imaging import GaussianSpec
from .optim import Parameter

TOL_OPS = 1e-4
TOL_NEGATIVE = 1e-1


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float
    invert: bool = False  # negative control: error must EXCEED threshold

    @property
    def passed(self) -> bool:
        if self.invert:
            return self.max_rel_err > self.threshold
        return self.max_rel_err < self.threshold


def _t(rng, shape) -> T.Tensor:
    return T.Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def corrupted_sigmoid(a: T.Tensor) -> T.Tensor:
    """Sigmoid with a deliberately wrong backward rule (sign flipped)."""
    s = 1.0 / (1.0 + np.exp(-a.data))
    return T.record(s, (a,), lambda g: (-g * s * (1.0 - s),))


def check_core_ops(seed: int = 7) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []

    def run(name, make):
        ts, fn = make()
        out.append(CheckResult(name, T.grad_check(fn, ts), TOL_OPS))

    def matmul_case():
        a, b = _t(rng, (3, 4)), _t(rng, (4, 2))
        return [("a", a), ("b", b)], lambda: T.tsum(T.sigmoid(T.matmul(a, b)))

    def conv_case():
        x, k, b = _t(rng, (2, 6, 6)), _t(rng, (3, 2, 3, 3)), _t(rng, (3,))
        return ([("x", x), ("k", k), ("b", b)],
                lambda: T.tmean(T.relu(T.conv2d(x, k, b, stride=2))))

    def elementwise_case():
        a, b = _t(rng, (5,)), _t(rng, (5,))
        return ([("a", a), ("b", b)],
                lambda: T.tsum(T.mul(T.sigmoid(a), T.add(T.tanh(b), T.relu(a)))))

    def softmax_case():
        m = _t(rng, (3, 6))
        return [("m", m)], lambda: T.tsum(T.mul(T.softmax_rows(m), m))

    def minmax_case():
        s = _t(rng, (9,))
        return [("s", s)], lambda: T.tsum(T.mul(T.minmax_normalize(s),
                                                T.minmax_normalize(s)))

    def bilinear_case():
        g = _t(rng, (7, 5))
        w = T.Tensor(rng.normal(size=(4, 6)), dtype=np.float64)

        def fn():
            r = I.bilinear_resize(g, 4, 6, antialias=True)
            return T.tsum(T.mul(r, w))
        return [("g", g)], fn

    def crop_pad_case():
        g = _t(rng, (5, 4))

        def fn():
            c = I.crop_top_left(g, 3, 3)
            p = I.pad_bottom_right_zero(c, 6, 6)
            return T.tsum(T.mul(p, p))
        return [("g", g)], fn

    def attention_case():
        q, p = _t(rng, (3, 4)), _t(rng, (6, 4))
        wq, wk, wv = _t(rng, (4, 4)), _t(rng, (4, 4)), _t(rng, (4, 4))

        def fn():
            attn = T.softmax_rows(T.scale_add(
                T.matmul(T.matmul(q, wq), T.transpose2d(T.matmul(p, wk))), 0.5))
            return T.tsum(T.sigmoid(T.matmul(attn, T.matmul(p, wv))))
        return [("q", q), ("p", p), ("wq", wq), ("wk", wk), ("wv", wv)], fn

    def losses_case():
        logits = _t(rng, (5, 5))
        target = (rng.random((5, 5)) > 0.5).astype(np.float64)
        weights = O.LossWeights()

        def fn():
            return O.loss_total(logits, target, None, weights)
        return [("logits", logits)], fn

    run("matmul", matmul_case)
    run("conv2d", conv_case)
    run("elementwise", elementwise_case)
    run("softmax", softmax_case)
    run("minmax_normalize", minmax_case)
    run("bilinear_resize", bilinear_case)
    run("crop_pad", crop_pad_case)
    run("attention", attention_case)
    run("bce_dice", losses_case)
    return out


def check_negative_control(seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    a = _t(rng, (6,))
    err = T.grad_check(lambda: T.tsum(T.mul(corrupted_sigmoid(a), a)), [("a", a)])
    return CheckResult("negative_control", err, TOL_NEGATIVE, invert=True)


def _full_loss_setup(seed: int = 11):
    """Tiny full pipeline with q_anc exposed as a leaf parameter."""
    cfg = tiny_config()
    rng = np.random.default_rng(seed)
    params = Mo.init_model(cfg, seed=seed, dtype=np.float64)
    q_anc = T.Tensor(rng.normal(size=(cfg.d,)), requires_grad=True, dtype=np.float64)
    contextual = [T.Tensor(rng.normal(size=(cfg.d,)), dtype=np.float64)
                  for _ in range(cfg.K)]
    tokens = T.Tensor(rng.normal(size=(cfg.N, cfg.d)), dtype=np.float64)
    feats_np = rng.normal(size=(cfg.C, cfg.H, cfg.W))
    mask = np.zeros((cfg.h, cfg.w))
    mask[4:11, 5:12] = 1.0
    spec = GaussianSpec(cfg.gauss_sigma, cfg.gauss_ksize)
    m_soft = O.soften_mask(mask, spec)
    m_down = O.downsample_target(mask, cfg.G, cfg.L_vl, spec)
    weights = O.LossWeights()

    def fn():
        s_raw = Gr.spatial_responses(tokens, q_anc)
        s_norm = T.minmax_normalize(s_raw)
        prior = Gr.build_spatial_prior(s_raw, cfg.h, cfg.w, cfg.L_vl, cfg.L_sam,
                                       params.conv_head)
        feats = Gr.inject_prior(T.Tensor(feats_np, dtype=np.float64), prior)
        bank = Q.QueryBank(contextual=contextual, anchor=q_anc)
        queries = Q.add_positional(bank, params.positional)
        logits = D.decode_conditioned(feats, queries, (cfg.h, cfg.w), params.decoder)
        s_up = O.token_map_upsampled(s_raw, cfg.h, cfg.w, cfg.L_vl)
        tmcc = O.loss_tmcc(s_up, m_soft, s_norm, m_down, weights)
        return O.loss_total(logits, mask, tmcc, weights)

    return cfg, params, q_anc, fn


def check_full_loss(seed: int = 11) -> list[CheckResult]:
    """Full objective vs central differences w.r.t. the anchor query, the
    conv-head weights and the decoder weights."""
    cfg, params, q_anc, fn = _full_loss_setup(seed)
    out = [CheckResult("full_loss/q_anc", T.grad_check(fn, [("q_anc", q_anc)]),
                       TOL_OPS)]
    head = [(p.name, p.tensor) for p in
            params.conv_head.weights[:1] + params.conv_head.biases]
    out.append(CheckResult("full_loss/conv_head", T.grad_check(fn, head), TOL_OPS))
    blk = params.decoder.blocks[0]
    dec = [(p.name, p.tensor) for p in
           (params.decoder.query_w, params.decoder.out_w, params.decoder.out_b,
            blk.q2p.wq, blk.p2q.wv, blk.ffn_w1)]
    out.append(CheckResult("full_loss/decoder", T.grad_check(fn, dec), TOL_OPS))
    return out


def check_reasoner_path(seed: int = 13) -> CheckResult:
    """End-to-end through the reasoner: loss(symbols -> bank -> responses)."""
    cfg = tiny_config()
    rng = np.random.default_rng(seed)
    reasoner = Q.init_reasoner(rng, 17, cfg.d_lm, cfg.d, cfg.K, dtype=np.float64)
    tokens = T.Tensor(rng.normal(size=(cfg.N, cfg.d_lm)), dtype=np.float64)
    mask = np.zeros((cfg.h, cfg.w))
    mask[2:9, 3:10] = 1.0
    spec = GaussianSpec(cfg.gauss_sigma, cfg.gauss_ksize)
    m_down = O.downsample_target(mask, cfg.G, cfg.L_vl, spec)
    weights = O.LossWeights()

    def fn():
        hiddens, h_anc = Q.generate_query_bank(tokens, [3, 1], reasoner)
        bank = Q.make_query_bank(hiddens, h_anc, reasoner)
        proj = Q.project_phi_rows(tokens, reasoner)
        s_raw = Gr.spatial_responses(proj, bank.anchor)
        return O.loss_m2t(T.minmax_normalize(s_raw), m_down, weights)

    ts = [(p.name, p.tensor) for p in
          (reasoner.embed, reasoner.init_w, reasoner.step_ws[0],
           reasoner.anchor_w, reasoner.phi_w1, reasoner.phi_w2)]
    return CheckResult("reasoner_path", T.grad_check(fn, ts), TOL_OPS)


def run_suite(module: str = "all") -> list[CheckResult]:
    suites: dict[str, Callable[[], list[CheckResult]]] = {
        "ops": check_core_ops,
        "full": check_full_loss,
        "reasoner": lambda: [check_reasoner_path()],
        "negative": lambda: [check_negative_control()],
    }
    if module == "all":
        results = []
        for fn in suites.values():
            results.extend(fn())
        return results
    if module not in suites:
        raise ValueError(f"unknown grad-check module {module!r}; "
                         f"options: all, {', '.join(suites)}")
    return suites[module]()
