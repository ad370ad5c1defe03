"""Confusion matrix and macro-averaged binary classification metrics.

Normal is the negative class (0), arc the positive class (1).  Precision
and recall are computed per class and macro-averaged; F1 is the harmonic
mean of the macro precision and macro recall.  A 0/0 ratio is defined as
0 and flagged in the report rather than raised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "EvalReport",
    "confusion",
    "per_class_rates",
    "report",
    "report_text",
    "SWEEP_ROW_HEADER",
    "sweep_row",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        for name in ("tn", "fp", "fn", "tp"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def as_array(self) -> np.ndarray:
        """Rows = true class, columns = predicted class."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])


@dataclass(frozen=True)
class EvalReport:
    cm: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()
    latency: object | None = None       # LatencyStats when an eval timed inference


def confusion(predictions, labels) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(
            f"predictions and labels must be equal-length 1-D, got {pred.shape} vs {true.shape}"
        )
    for name, arr in (("predictions", pred), ("labels", true)):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0 and 1")
    return ConfusionMatrix(
        tn=int(np.sum((true == 0) & (pred == 0))),
        fp=int(np.sum((true == 0) & (pred == 1))),
        fn=int(np.sum((true == 1) & (pred == 0))),
        tp=int(np.sum((true == 1) & (pred == 1))),
    )


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def per_class_rates(cm: ConfusionMatrix) -> dict[str, float]:
    """Per-class precision/recall with the 0/0 -> 0 convention applied."""
    flags: list[str] = []
    return {
        "precision_0": _ratio(cm.tn, cm.tn + cm.fn, "precision_0", flags),
        "recall_0": _ratio(cm.tn, cm.tn + cm.fp, "recall_0", flags),
        "precision_1": _ratio(cm.tp, cm.tp + cm.fp, "precision_1", flags),
        "recall_1": _ratio(cm.tp, cm.tp + cm.fn, "recall_1", flags),
    }


def report(cm: ConfusionMatrix, latency=None) -> EvalReport:
    if cm.total == 0:
        raise ValueError("cannot report on an empty confusion matrix")
    flags: list[str] = []
    p0 = _ratio(cm.tn, cm.tn + cm.fn, "precision_0", flags)
    r0 = _ratio(cm.tn, cm.tn + cm.fp, "recall_0", flags)
    p1 = _ratio(cm.tp, cm.tp + cm.fp, "precision_1", flags)
    r1 = _ratio(cm.tp, cm.tp + cm.fn, "recall_1", flags)
    precision = (p0 + p1) / 2
    recall = (r0 + r1) / 2
    if precision + recall == 0.0:
        flags.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return EvalReport(
        cm=cm,
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=tuple(flags),
        latency=latency,
    )


def report_text(rep: EvalReport) -> str:
    """Structured text document with stable key order."""
    doc = {
        "accuracy": rep.accuracy,
        "confusion": {"tn": rep.cm.tn, "fp": rep.cm.fp, "fn": rep.cm.fn, "tp": rep.cm.tp},
        "degenerate": list(rep.degenerate),
        "f1": rep.f1,
        "precision": rep.precision,
        "recall": rep.recall,
    }
    if rep.latency is not None:
        doc["latency"] = dict(sorted(vars(rep.latency).items(), key=lambda kv: kv[0]))
    return json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"


SWEEP_ROW_HEADER = "cell\taccuracy\tprecision\trecall\tf1\tp50_ms"


def sweep_row(cell: str, rep: EvalReport) -> str:
    """One tab-separated row for sweep aggregation tables."""
    p50 = "" if rep.latency is None else f"{rep.latency.p50:.4f}"
    return (
        f"{cell}\t{rep.accuracy:.6f}\t{rep.precision:.6f}"
        f"\t{rep.recall:.6f}\t{rep.f1:.6f}\t{p50}"
    )
