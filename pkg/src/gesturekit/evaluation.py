"""Accuracy reports and confusion analysis."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .radar_sim import CLASS_NAMES


@dataclass
class EvalReport:
    """Per-class and macro accuracy plus a confusion matrix (rows = truth)."""

    per_class: np.ndarray
    average: float
    confusion: np.ndarray
    n: int
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))
    model_id: str = field(default="", compare=False)

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (np.array_equal(self.per_class, other.per_class) and self.average == other.average
                and np.array_equal(self.confusion, other.confusion) and self.n == other.n
                and self.class_names == other.class_names)

    @classmethod
    def from_confusion(cls, confusion, class_names=None, model_id: str = "") -> "EvalReport":
        confusion = np.asarray(confusion, dtype=np.int64)
        support = confusion.sum(axis=1)
        per_class = np.divide(np.diag(confusion), support, out=np.zeros(len(support)), where=support > 0)
        present = support > 0
        average = float(per_class[present].mean()) if present.any() else 0.0
        return cls(per_class, average, confusion, int(confusion.sum()),
                   list(class_names or CLASS_NAMES[:len(confusion)]), model_id)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "accuracy", "n"])
        support = self.confusion.sum(axis=1)
        for name, acc, n in zip(self.class_names, self.per_class, support):
            w.writerow([name, repr(float(acc)), int(n)])
        w.writerow(["avg", repr(float(self.average)), self.n])
        w.writerow([])
        for name, row in zip(self.class_names, self.confusion):
            w.writerow([name, *map(int, row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, model_id: str = "") -> "EvalReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["class", "accuracy", "n"]:
            raise ValueError("report CSV must start with header 'class,accuracy,n'")
        blank = rows.index([])
        acc_rows, matrix_rows = rows[1:blank], rows[blank + 1:]
        if not acc_rows or acc_rows[-1][0] != "avg":
            raise ValueError("report CSV is missing the 'avg' row")
        names = [r[0] for r in acc_rows[:-1]]
        per_class = np.array([float(r[1]) for r in acc_rows[:-1]])
        confusion = np.array([[int(v) for v in r[1:]] for r in matrix_rows], dtype=np.int64)
        if [r[0] for r in matrix_rows] != names or confusion.shape != (len(names), len(names)):
            raise ValueError("confusion block does not match the class rows")
        return cls(per_class, float(acc_rows[-1][1]), confusion, int(acc_rows[-1][2]), names, model_id)


def confusion_matrix(y_true, y_pred, n_classes: int = len(CLASS_NAMES)) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def evaluate(model, X, y, model_id: str = "", n_classes: int = len(CLASS_NAMES)) -> EvalReport:
    """Score anything with a ``predict`` method (or a plain callable) on ``(X, y)``."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("test set is empty")
    predict = model.predict if hasattr(model, "predict") else model
    y_pred = np.asarray(predict(X))
    return EvalReport.from_confusion(confusion_matrix(y, y_pred, n_classes), CLASS_NAMES[:n_classes], model_id)


def error_breakdown(report: EvalReport) -> list[tuple[str, str, int, float]]:
    """Off-diagonal confusions as ``(true, predicted, count, rate)``, most frequent first."""
    cm = report.confusion
    support = cm.sum(axis=1)
    pairs = []
    for i, j in zip(*np.nonzero(cm)):
        if i != j:
            pairs.append((report.class_names[i], report.class_names[j], int(cm[i, j]), cm[i, j] / support[i]))
    pairs.sort(key=lambda p: (-p[3], -p[2]))
    return pairs


def confusion_to_pgm(report: EvalReport, cell: int = 16) -> bytes:
    """Grayscale heat map of row-normalized confusion rates."""
    cm = report.confusion.astype(np.float64)
    rates = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    img = np.kron(np.round(rates * 255).astype(np.uint8), np.ones((cell, cell), dtype=np.uint8))
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
