"""Accuracy, confusion matrices and per-class precision/recall/F1."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrix, LengthMismatch, UnknownLabel


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows true, columns predicted
    labels: list

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(y_true, y_pred, labels) -> ConfusionMatrix:
    labels = list(labels)
    index = {lab: k for k, lab in enumerate(labels)}
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        try:
            counts[index[t], index[p]] += 1
        except KeyError as exc:
            raise UnknownLabel(f"label {exc.args[0]!r} is not in the vocabulary") from None
    return ConfusionMatrix(counts, labels)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def per_class_metrics(cm: ConfusionMatrix) -> dict[str, np.ndarray]:
    """Precision, recall and F1 per class; empty denominators give 0."""
    if cm.total == 0:
        raise EmptyMatrix("per-class metrics of an empty confusion matrix")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    col, row = c.sum(axis=0), c.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {"precision": precision, "recall": recall, "f1": f1}


def render_text(cm: ConfusionMatrix) -> str:
    names = [str(l) for l in cm.labels]
    width = max(max(map(len, names)), len(str(cm.counts.max(initial=0))), 5)
    lines = [" " * width + " | " + " ".join(n[:width].rjust(width) for n in names)]
    lines.append("-" * len(lines[0]))
    for name, row in zip(names, cm.counts):
        lines.append(name.rjust(width) + " | " + " ".join(str(v).rjust(width) for v in row))
    if cm.total:
        m = per_class_metrics(cm)
        lines.append("")
        lines.append(f"{'class':>{width}}  precision  recall     f1")
        for k, name in enumerate(names):
            lines.append(f"{name:>{width}}  {m['precision'][k]:9.4f}  {m['recall'][k]:6.4f}  {m['f1'][k]:6.4f}")
        lines.append(f"accuracy: {accuracy(cm):.4f} ({int(np.trace(cm.counts))}/{cm.total})")
    return "\n".join(lines)


def render_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true_label", "pred_label", "count"])
    for i, t in enumerate(cm.labels):
        for j, p in enumerate(cm.labels):
            w.writerow([t, p, int(cm.counts[i, j])])
    return buf.getvalue()


def report_dict(cm: ConfusionMatrix) -> dict:
    m = per_class_metrics(cm)
    return {
        "labels": [str(l) for l in cm.labels],
        "counts": cm.counts.tolist(),
        "accuracy": accuracy(cm),
        "per_class": {
            str(l): {k: float(m[k][i]) for k in ("precision", "recall", "f1")}
            for i, l in enumerate(cm.labels)
        },
    }


def render_json(cm: ConfusionMatrix) -> str:
    return json.dumps(report_dict(cm), indent=2)
