"""Multi-label evaluation: accuracy over all (document, class) cells,
pooled micro-averaged F1, and average per-class log-likelihood of the
presence beliefs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import DELTA_CLAMP, clamp_probability


def _as_bit_matrix(x, name):
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a (documents, classes) matrix")
    if not np.all(np.isin(arr, (0, 1))):
        raise ValueError(f"{name}: entries must be 0 or 1")
    return arr.astype(np.int64)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def average_accuracy(predicted, truth) -> float:
    """Fraction of (document, class) cells predicted correctly."""
    p = _as_bit_matrix(predicted, "predicted")
    t = _as_bit_matrix(truth, "truth")
    _check_same_shape(p, t)
    return float((p == t).mean())


def micro_f1(predicted, truth) -> float:
    """2 TP / (2 TP + FP + FN) pooled over every cell; defined as 1.0 when
    there are no positives (and no mistakes) anywhere."""
    p = _as_bit_matrix(predicted, "predicted")
    t = _as_bit_matrix(truth, "truth")
    _check_same_shape(p, t)
    tp = int(((p == 1) & (t == 1)).sum())
    fp = int(((p == 1) & (t == 0)).sum())
    fn = int(((p == 0) & (t == 1)).sum())
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def avg_class_log_likelihood(beliefs, truth) -> float:
    """Mean over cells of log P(observed bit) under the presence beliefs.

    Beliefs are clamped to the same interval the trainer uses, so perfectly
    confident correct predictions score just under zero and the value is
    always finite.
    """
    b = np.asarray(beliefs, dtype=np.float64)
    t = _as_bit_matrix(truth, "truth")
    _check_same_shape(b, t)
    if np.any(b < 0.0) or np.any(b > 1.0) or not np.all(np.isfinite(b)):
        raise ValueError("beliefs: entries must be probabilities in [0, 1]")
    b = clamp_probability(b, DELTA_CLAMP)
    return float((t * np.log(b) + (1 - t) * np.log(1.0 - b)).mean())


@dataclass
class MetricsReport:
    avg_accuracy: float
    micro_f1: float
    avg_class_loglik: float
    ann_rmse: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.avg_accuracy <= 1.0:
            raise ValueError("avg_accuracy out of [0, 1]")
        if not 0.0 <= self.micro_f1 <= 1.0:
            raise ValueError("micro_f1 out of [0, 1]")
        if self.avg_class_loglik > 0.0:
            raise ValueError("avg_class_loglik must be <= 0")
        if self.ann_rmse is not None and self.ann_rmse < 0.0:
            raise ValueError("ann_rmse must be >= 0")

    def to_csv(self) -> str:
        rows = [
            ("avg_accuracy", self.avg_accuracy),
            ("micro_f1", self.micro_f1),
            ("avg_class_loglik", self.avg_class_loglik),
        ]
        if self.ann_rmse is not None:
            rows.append(("ann_rmse", self.ann_rmse))
        return "metric,value\n" + "\n".join(f"{k},{v:.17g}" for k, v in rows) + "\n"


def compute_report(predicted, beliefs, truth, ann_rmse=None) -> MetricsReport:
    return MetricsReport(
        avg_accuracy=average_accuracy(predicted, truth),
        micro_f1=micro_f1(predicted, truth),
        avg_class_loglik=avg_class_log_likelihood(beliefs, truth),
        ann_rmse=ann_rmse,
    )
