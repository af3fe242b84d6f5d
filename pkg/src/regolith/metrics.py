"""Classifier scoring: confusion matrices and accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RegolithError


class EvaluationError(RegolithError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = truth and columns = prediction."""

    classes: tuple[str, ...]
    counts: np.ndarray  # (K, K) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_percentages(self) -> np.ndarray:
        """Rows rescaled to sum to 100 (zero rows stay zero)."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, self.counts * 100.0 / sums, 0.0)
        return out

    def render(self) -> str:
        width = max(len(c) for c in self.classes) + 2
        head = " " * width + "".join(f"{c:>{width}}" for c in self.classes)
        rows = [head]
        pct = self.row_percentages()
        for i, name in enumerate(self.classes):
            cells = "".join(f"{pct[i, j]:>{width}.1f}" for j in range(len(self.classes)))
            rows.append(f"{name:<{width}}{cells}")
        return "\n".join(rows)


def confusion(truth, pred, classes) -> ConfusionMatrix:
    """Tally truth/prediction label pairs into a matrix."""
    truth = list(truth)
    pred = list(pred)
    if len(truth) != len(pred):
        raise EvaluationError(f"length mismatch: {len(truth)} truths vs {len(pred)} predictions")
    classes = tuple(classes)
    index = {name: i for i, name in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in index:
            raise EvaluationError(f"unknown truth label {t!r}")
        if p not in index:
            raise EvaluationError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def accuracy(cm: ConfusionMatrix) -> float:
    """Trace over total."""
    total = cm.total
    if total == 0:
        raise EvaluationError("empty confusion matrix")
    return float(np.trace(cm.counts)) / total
