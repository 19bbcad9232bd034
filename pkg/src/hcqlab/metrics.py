"""Binary confusion-matrix statistics.

The positive class is label 1 (stop sign).  Ratios whose denominator is zero
are reported as 0, and the Matthews correlation coefficient is 0 whenever any
of its four marginal sums vanishes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if int(v) != v or v < 0:
                raise ValueError(f"confusion count {f.name}={v!r} must be a non-negative integer")
            object.__setattr__(self, f.name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predictions, labels) -> "ConfusionMatrix":
        p = np.asarray(predictions).astype(int)
        y = np.asarray(labels).astype(int)
        if p.shape != y.shape:
            raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in shape")
        return cls(
            tp=int(np.sum((p == 1) & (y == 1))),
            fp=int(np.sum((p == 1) & (y == 0))),
            tn=int(np.sum((p == 0) & (y == 0))),
            fn=int(np.sum((p == 0) & (y == 1))),
        )


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    specificity: float
    sensitivity: float
    false_positive_rate: float
    precision: float
    f1: float
    mcc: float


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    tp, fp, tn, fn = cm.tp, cm.fp, cm.tn, cm.fn
    precision = _ratio(tp, tp + fp)
    sensitivity = _ratio(tp, tp + fn)
    sums = ((tp + fp) * (tn + fn), (tp + fn) * (tn + fp))
    if 0 in sums:
        mcc = 0.0
    else:
        # one square root of the exact integer product keeps perfect squares exact
        mcc = (tp * tn - fp * fn) / math.sqrt(sums[0] * sums[1])
    return MetricsReport(
        accuracy=(tp + tn) / cm.total,
        specificity=_ratio(tn, tn + fp),
        sensitivity=sensitivity,
        false_positive_rate=_ratio(fp, fp + tn),
        precision=precision,
        f1=_ratio(2 * precision * sensitivity, precision + sensitivity),
        mcc=mcc,
    )


REPORT_HEADER = ("model",) + tuple(f.name for f in fields(MetricsReport)) + ("tp", "fp", "tn", "fn")


def report_row(name: str, cm: ConfusionMatrix) -> tuple:
    """One CSV record: model name, the seven statistics, then the raw counts."""
    return (name,) + astuple(compute_metrics(cm)) + astuple(cm)


def format_rows(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
