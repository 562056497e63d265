"""Training loop, evaluation and the ablation grid runner.

One run = deterministic function of (config, dataset bytes): parameters,
batch order and metrics are all seeded. Ablation runs are independent and
may execute in parallel worker processes (ANCHORSEG_THREADS), with rows
written by a single writer in grid order so the CSV is byte-stable.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics as M
from . import model as Mo
from . import objectives as O
from . import tensor as T
from .config import RunConfig
from .imaging import GaussianSpec
from .optim import adamw_step, zero_grads
from .scenes import SceneSample, encode_scene


@dataclass
class Split:
    train: list[int]
    eval: list[int]


def split_indices(n: int, train_fraction: float) -> Split:
    """80/20 by sample index, before any shuffling."""
    n_train = int(n * train_fraction)
    return Split(train=list(range(n_train)), eval=list(range(n_train, n)))


@dataclass
class SampleCache:
    tokens: list[np.ndarray]
    m_soft: dict[int, np.ndarray]
    m_down: dict[int, np.ndarray]


def build_cache(samples: Sequence[SceneSample], cfg: RunConfig,
                train_idx: Sequence[int]) -> SampleCache:
    spec = GaussianSpec(cfg.gauss_sigma, cfg.gauss_ksize)
    tokens = [encode_scene(s.image, cfg.G, cfg.d_lm, cfg.seed) for s in samples]
    m_soft, m_down = {}, {}
    for i in train_idx:
        mask = samples[i].mask.astype(np.float64)
        m_soft[i] = O.soften_mask(mask, spec).astype(np.float32)
        m_down[i] = O.downsample_target(mask, cfg.G, cfg.L_vl, spec).astype(np.float32)
    return SampleCache(tokens, m_soft, m_down)


def sample_loss(params: Mo.ModelParams, cfg: RunConfig, sample: SceneSample,
                tokens: np.ndarray, m_soft: np.ndarray, m_down: np.ndarray,
                weights: O.LossWeights) -> T.Tensor:
    out = Mo.forward_sample(params, cfg, tokens, sample.symbols, sample.image)
    tmcc = None
    if cfg.use_tmcc and (cfg.use_t2m or cfg.use_m2t):
        s_up = O.token_map_upsampled(out.s_raw, cfg.h, cfg.w, cfg.L_vl)
        tmcc = O.loss_tmcc(s_up, m_soft, out.s_norm, m_down, weights,
                           cfg.use_t2m, cfg.use_m2t)
    return O.loss_total(out.logits, sample.mask.astype(np.float32), tmcc, weights)


def predict_mask(params: Mo.ModelParams, cfg: RunConfig, sample: SceneSample,
                 tokens: np.ndarray) -> np.ndarray:
    out = Mo.forward_sample(params, cfg, tokens, sample.symbols, sample.image)
    return (out.logits.data > 0.0).astype(np.uint8)


def evaluate(params: Mo.ModelParams, cfg: RunConfig,
             samples: Sequence[SceneSample], cache: SampleCache,
             idx: Sequence[int]):
    preds, gts, nulls = [], [], []
    for i in idx:
        preds.append(predict_mask(params, cfg, samples[i], cache.tokens[i]))
        gts.append(samples[i].mask)
        nulls.append(samples[i].is_null)
    giou = M.giou(preds, gts)
    ciou = M.ciou(preds, gts)
    try:
        prec = M.prec_at_05(preds, gts)
    except Exception:
        prec = 0.0
    nacc = M.n_acc(preds, gts, nulls)
    return giou, ciou, prec, nacc


@dataclass
class TrainResult:
    params: Mo.ModelParams
    row: M.MetricsRow
    loss_history: list[float]


def train(cfg: RunConfig, samples: Sequence[SceneSample],
          run_id: str = "run", ablation_id: str = "default",
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    cfg.validate()
    weights = O.LossWeights(cfg.lambda_bce, cfg.lambda_dice, cfg.lambda_mask,
                            cfg.lambda_tmcc, cfg.lambda_txt)
    split = split_indices(len(samples), cfg.train_fraction)
    cache = build_cache(samples, cfg, split.train)
    params = Mo.init_model(cfg, cfg.seed)
    plist = params.trainable_parameters()
    rng = np.random.default_rng(cfg.seed + 1)

    order: list[int] = []
    history: list[float] = []
    for step in range(cfg.steps):
        if len(order) < cfg.batch_size:
            order += [split.train[j] for j in rng.permutation(len(split.train))]
        batch, order = order[:cfg.batch_size], order[cfg.batch_size:]
        zero_grads(plist)
        with T.Tape():
            total = None
            for i in batch:
                li = sample_loss(params, cfg, samples[i], cache.tokens[i],
                                 cache.m_soft[i], cache.m_down[i], weights)
                total = li if total is None else T.add(total, li)
            loss = T.scale_add(total, 1.0 / cfg.batch_size)
            val = loss.item()
            if not np.isfinite(val):
                raise RuntimeError(
                    f"non-finite loss {val} at step {step}; batch {batch}")
            T.backward(loss)
        adamw_step(plist, cfg.lr, (cfg.beta1, cfg.beta2), cfg.weight_decay,
                   cfg.warmup_steps, cfg.clip_norm)
        history.append(val)
        if log and (step % max(1, cfg.eval_interval) == 0 or step == cfg.steps - 1):
            log(f"[{run_id}] step {step} loss {val:.4f}")

    giou, ciou, prec, nacc = evaluate(params, cfg, samples, cache, split.eval)
    row = M.MetricsRow(run_id, ablation_id, cfg.seed, giou, ciou, prec, nacc)
    if log:
        log(f"[{run_id}] giou {giou:.4f} ciou {ciou:.4f} prec {prec:.4f}")
    return TrainResult(params=params, row=row, loss_history=history)


# ---------------------------------------------------------------------------
# ablation grid
# ---------------------------------------------------------------------------

N_SWEEP = (4, 8, 16, 32)
N_SEEDS = 3


def ablation_grid(base: RunConfig) -> list[tuple[str, RunConfig]]:
    """Bank-length sweep plus the five toggle rows, three seeds each."""
    rows = []
    for n in N_SWEEP:
        rows.append((f"n{n}", replace(base, N_bank=n)))
    toggles = {
        "exp1": dict(use_prior=False, use_tmcc=False, use_contextual=True),
        "exp2": dict(use_prior=False, use_tmcc=True, use_contextual=True),
        "exp3": dict(use_prior=True, use_tmcc=False, use_contextual=True),
        "exp4": dict(use_prior=True, use_tmcc=True, use_contextual=False),
        "exp5": dict(use_prior=True, use_tmcc=True, use_contextual=True),
    }
    for name, kw in toggles.items():
        rows.append((name, replace(base, **kw)))
    out = []
    for name, cfg in rows:
        for s in range(N_SEEDS):
            seed = base.seed + s
            out.append((f"{name}-s{seed}", replace(cfg, seed=seed)))
    return out


def _run_one(args):
    run_id, cfg, samples = args
    ablation_id = run_id.rsplit("-s", 1)[0]
    result = train(cfg, samples, run_id=run_id, ablation_id=ablation_id)
    return result.row


def ablate(base: RunConfig, samples: Sequence[SceneSample],
           log: Optional[Callable[[str], None]] = None) -> list[M.MetricsRow]:
    grid = ablation_grid(base)
    workers = int(os.environ.get("ANCHORSEG_THREADS", "1"))
    jobs = [(run_id, cfg, list(samples)) for run_id, cfg in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_run_one(job))
            if log:
                log(f"finished {job[0]}: giou {rows[-1].giou:.4f}")
    return rows


def write_metrics_csv(path, rows: Sequence[M.MetricsRow]):
    with open(path, "w") as f:
        f.write(M.CSV_HEADER + "\n")
        for row in rows:
            f.write(row.csv_line() + "\n")
