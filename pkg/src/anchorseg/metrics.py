"""Segmentation metrics over lists of binary masks.

Conventions: empty-prediction vs empty-target counts as IoU 1 (a correct
rejection; null identification is additionally reported as n_acc), and the
Precision@0.5 pool excludes null-target samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError


@dataclass
class MetricsRow:
    run_id: str
    ablation_id: str
    seed: int
    giou: float
    ciou: float
    prec05: float
    nacc: Optional[float]  # None when no null samples exist

    def csv_line(self) -> str:
        nacc = "" if self.nacc is None else f"{self.nacc:.6f}"
        return (f"{self.run_id},{self.ablation_id},{self.seed},"
                f"{self.giou:.6f},{self.ciou:.6f},{self.prec05:.6f},{nacc}")


CSV_HEADER = "run_id,ablation_id,seed,giou,ciou,prec05,nacc"


def _pair_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int]:
    if pred.shape != gt.shape:
        raise ContractError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    return int((p & g).sum()), int((p | g).sum())


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    inter, union = _pair_counts(pred, gt)
    if union == 0:
        return 1.0
    return inter / union


def giou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    if len(preds) == 0 or len(preds) != len(gts):
        raise ContractError(f"giou needs equal non-empty lists, got {len(preds)}/{len(gts)}")
    return float(np.mean([iou(p, g) for p, g in zip(preds, gts)]))


def ciou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    if len(preds) == 0 or len(preds) != len(gts):
        raise ContractError(f"ciou needs equal non-empty lists, got {len(preds)}/{len(gts)}")
    inter = union = 0
    for p, g in zip(preds, gts):
        i, u = _pair_counts(p, g)
        inter += i
        union += u
    if union == 0:
        return 1.0
    return inter / union


def prec_at_05(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> float:
    """Fraction of non-null samples with IoU >= 0.5 (boundary inclusive)."""
    eligible = [(p, g) for p, g in zip(preds, gts) if np.asarray(g, bool).any()]
    if not eligible:
        raise ContractError("prec@0.5 has no eligible (non-null) samples")
    hits = sum(1 for p, g in eligible if iou(p, g) >= 0.5)
    return hits / len(eligible)


def n_acc(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
          null_flags: Sequence[bool]) -> Optional[float]:
    """Among null-target samples, the fraction predicted empty; None if none."""
    if not (len(preds) == len(gts) == len(null_flags)):
        raise ContractError("n_acc needs equal-length lists")
    nulls = [p for p, flag in zip(preds, null_flags) if flag]
    if not nulls:
        return None
    correct = sum(1 for p in nulls if not np.asarray(p, bool).any())
    return correct / len(nulls)
