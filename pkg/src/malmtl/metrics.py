"""Confusion matrices and detection metrics (TPR, FPR, precision, accuracy, F, error rate)."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


class IndexOutOfRange(IndexError):
    pass


class EmptyMatrix(ValueError):
    pass


class ConfusionMatrix:
    """``counts[actual][predicted]`` over ``n_classes`` classes."""

    def __init__(self, n_classes: int, counts=None, class_names=None):
        if n_classes < 2:
            raise ValueError("a confusion matrix needs at least 2 classes")
        self.n_classes = n_classes
        if counts is None:
            self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        else:
            counts = np.array(counts, dtype=np.int64)
            if counts.shape != (n_classes, n_classes) or (counts < 0).any():
                raise ValueError(f"counts must be a nonnegative {n_classes}x{n_classes} integer array")
            self.counts = counts
        self.class_names = tuple(class_names) if class_names else tuple(str(i) for i in range(n_classes))

    @classmethod
    def from_pairs(cls, n_classes, actual, predicted, class_names=None) -> ConfusionMatrix:
        cm = cls(n_classes, class_names=class_names)
        for a, p in zip(actual, predicted):
            cm.accumulate(a, p)
        return cm

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, actual: int, predicted: int) -> ConfusionMatrix:
        n = self.n_classes
        if not (0 <= actual < n and 0 <= predicted < n):
            raise IndexOutOfRange(f"class index out of range for {n} classes: ({actual}, {predicted})")
        self.counts[actual, predicted] += 1
        return self

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge matrices of different size")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts, self.class_names)

    def to_csv(self) -> str:
        """Header row of predicted class names; each following row is one actual class."""
        buf = io.StringIO()
        buf.write("actual\\predicted," + ",".join(self.class_names) + "\n")
        for name, row in zip(self.class_names, self.counts):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    tpr: float
    fpr: float
    precision: float
    accuracy: float
    f_measure: float
    error_rate: float
    undefined: tuple[str, ...] = ()
    positive_class: int = 1
    per_class: tuple = field(default=(), compare=False)

    def record(self, prefix: str = "") -> str:
        fields = [f"{k}={getattr(self, k)!r}" for k in
                  ("tp", "tn", "fp", "fn", "tpr", "fpr", "precision", "accuracy", "f_measure", "error_rate")]
        if self.undefined:
            fields.append("undefined=" + ",".join(self.undefined))
        return prefix + "\t".join(fields)


def metrics_from_counts(tp, tn, fp, fn, positive_class: int = 1) -> MetricsReport:
    tp, tn, fp, fn = int(tp), int(tn), int(fp), int(fn)
    total = tp + tn + fp + fn
    if total == 0:
        raise EmptyMatrix("no samples counted")
    undefined: list[str] = []
    tpr = _ratio(tp, tp + fn, "tpr", undefined)
    fpr = _ratio(fp, fp + tn, "fpr", undefined)
    precision = _ratio(tp, tp + fp, "precision", undefined)
    f_measure = _ratio(2 * tpr * precision, tpr + precision, "f_measure", undefined)
    accuracy = (tp + tn) / total
    error_rate = (fp + fn) / total
    return MetricsReport(tp, tn, fp, fn, tpr, fpr, precision, accuracy, f_measure, error_rate,
                         tuple(undefined), positive_class)


def _one_vs_rest(counts: np.ndarray, k: int):
    tp = counts[k, k]
    fn = counts[k].sum() - tp
    fp = counts[:, k].sum() - tp
    tn = counts.sum() - tp - fn - fp
    return tp, tn, fp, fn


def compute_metrics(cm: ConfusionMatrix, positive_class: int = 1) -> MetricsReport:
    """Metrics with ``positive_class`` as positive and every other class as negative."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    if not 0 <= positive_class < cm.n_classes:
        raise IndexOutOfRange(f"positive class {positive_class} out of range")
    return metrics_from_counts(*_one_vs_rest(cm.counts, positive_class), positive_class=positive_class)


def per_class_metrics(cm: ConfusionMatrix) -> list[MetricsReport]:
    return [compute_metrics(cm, k) for k in range(cm.n_classes)]


def macro_average(cm: ConfusionMatrix) -> MetricsReport:
    """Unweighted mean of the one-vs-rest reports.

    Accuracy and error rate are the overall ones; the count fields hold the
    correct total in ``tp`` and the misclassified total in ``fp``/``fn``.
    """
    reports = per_class_metrics(cm)
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("tpr", "fpr", "precision", "f_measure")}
    total = cm.total
    correct = int(np.trace(cm.counts))
    undefined = tuple(sorted({u for r in reports for u in r.undefined}))
    return MetricsReport(correct, 0, total - correct, total - correct, mean["tpr"], mean["fpr"], mean["precision"],
                         correct / total, mean["f_measure"], (total - correct) / total, undefined, -1,
                         tuple(reports))


def task_report(cm: ConfusionMatrix) -> MetricsReport:
    """Binary matrices report class 1 (malware) as positive; larger ones report the macro average."""
    return compute_metrics(cm, 1) if cm.n_classes == 2 else macro_average(cm)


def format_table(rows: dict[str, MetricsReport]) -> str:
    head = f"{'task':<8}{'TPR':>9}{'FPR':>9}{'Prec':>9}{'Acc':>9}{'F':>9}{'Err':>9}"
    lines = [head, "-" * len(head)]
    for name, r in rows.items():
        lines.append(f"{name:<8}{r.tpr:>9.4f}{r.fpr:>9.4f}{r.precision:>9.4f}{r.accuracy:>9.4f}"
                     f"{r.f_measure:>9.4f}{r.error_rate:>9.4f}")
    return "\n".join(lines)
