"""Binary classification metrics from confusion counts."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError

METRIC_NAMES = ("accuracy", "f1", "precision", "recall", "specificity")


def _ratio(num: int, den: int, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    f1: float
    precision: float
    recall: float
    specificity: float
    undefined: tuple = field(default=())

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "MetricsReport":
        flags: list[str] = []
        precision = _ratio(tp, tp + fp, "precision", flags)
        recall = _ratio(tp, tp + fn, "recall", flags)
        specificity = _ratio(tn, tn + fp, "specificity", flags)
        accuracy = _ratio(tp + tn, tp + tn + fp + fn, "accuracy", flags)
        f1 = _ratio(2 * precision * recall, precision + recall, "f1", flags)
        return cls(int(tp), int(fp), int(tn), int(fn), accuracy, f1, precision, recall, specificity,
                   tuple(flags))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def compute_metrics(predictions, labels, threshold: float = 0.5) -> MetricsReport:
    """Confusion counts and metrics with CWS (label 1) as the positive class.

    A prediction is positive when its probability is >= ``threshold``.
    """
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.size == 0:
        raise DataError("compute_metrics: no predictions")
    if p.size != y.size:
        raise DataError(f"compute_metrics: {p.size} predictions vs {y.size} labels")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise DataError("compute_metrics: labels must be 0 or 1")
    pred = p >= threshold
    pos = y == 1
    return MetricsReport.from_counts(
        tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)),
    )
