"""Classification metrics and the paired sign test."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binomtest

CLASS_NAMES = ("hold", "switch")


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    per_class: dict[str, ClassScores]
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def to_json(self) -> dict:
        out = asdict(self)
        out["per_class"] = {k: asdict(v) for k, v in self.per_class.items()}
        return out


def _scores(tp: int, fp: int, fn: int) -> ClassScores:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return ClassScores(p, r, f1)


def from_confusion(tp: int, fn: int, fp: int, tn: int) -> Metrics:
    """Metrics with switch (1) as the positive class."""
    total = tp + fn + fp + tn
    if total == 0:
        raise ValueError("no samples to score")
    pos = _scores(tp, fp, fn)
    neg = _scores(tn, fn, fp)
    return Metrics(
        accuracy=(tp + tn) / total,
        macro_f1=(pos.f1 + neg.f1) / 2,
        per_class={"switch": pos, "hold": neg},
        tp=tp,
        fn=fn,
        fp=fp,
        tn=tn,
    )


def compute_metrics(y_true, y_pred) -> Metrics:
    y = np.asarray(y_true).astype(int)
    p = np.asarray(y_pred).astype(int)
    if y.shape != p.shape:
        raise ValueError("label and prediction vectors differ in length")
    if y.size == 0:
        raise ValueError("no samples to score")
    tp = int(((p == 1) & (y == 1)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    return from_confusion(tp, fn, fp, tn)


@dataclass(frozen=True)
class SignTest:
    p_value: float
    a_better: int
    b_better: int
    flagged: bool


def sign_test(pred_a, pred_b, labels) -> SignTest:
    """Two-sided exact binomial test over the pairs where exactly one system is right.

    With no such pairs the p-value is 1.0 and ``flagged`` is set.
    """
    a = np.asarray(pred_a) == np.asarray(labels)
    b = np.asarray(pred_b) == np.asarray(labels)
    if a.shape != b.shape:
        raise ValueError("prediction vectors must be aligned")
    a_only = int((a & ~b).sum())
    b_only = int((b & ~a).sum())
    n = a_only + b_only
    if n == 0:
        return SignTest(1.0, 0, 0, True)
    return SignTest(float(binomtest(a_only, n, 0.5).pvalue), a_only, b_only, False)
