import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from serkit.dataset import EMOTIONS
from serkit.errors import EmptyMatrix, LengthMismatch, UnknownLabel
from serkit.evaluation import (
    ConfusionMatrix,
    accuracy,
    confusion_matrix,
    per_class_metrics,
    render_csv,
    render_json,
    render_text,
    report_dict,
)


def test_perfect_predictions_give_diagonal_of_80s():
    y = [e for e in EMOTIONS for _ in range(80)]
    cm = confusion_matrix(y, y, EMOTIONS)
    np.testing.assert_array_equal(cm.counts, 80 * np.eye(7, dtype=int))
    assert accuracy(cm) == 1.0
    m = per_class_metrics(cm)
    for k in ("precision", "recall", "f1"):
        np.testing.assert_array_equal(m[k], 1.0)


def test_three_class_harness():
    cm = confusion_matrix([0, 0, 1], [0, 1, 1], [0, 1, 2])
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 0] = expected[0, 1] = expected[1, 1] = 1
    np.testing.assert_array_equal(cm.counts, expected)


def test_empty_inputs():
    cm = confusion_matrix([], [], EMOTIONS)
    np.testing.assert_array_equal(cm.counts, 0)
    with pytest.raises(EmptyMatrix):
        accuracy(cm)


def test_input_errors():
    with pytest.raises(UnknownLabel):
        confusion_matrix(["angry"], ["bored"], EMOTIONS)
    with pytest.raises(LengthMismatch):
        confusion_matrix(["angry"], [], EMOTIONS)


def test_accuracy_of_reported_test_matrix():
    # 560 test items with 554 on the diagonal reproduce a 99% headline figure (rounded)
    counts = 80 * np.eye(7, dtype=int)
    for i, j in [(0, 3), (2, 6), (3, 5), (4, 6), (5, 3), (6, 4)]:
        counts[i, i] -= 1
        counts[i, j] += 1
    cm = ConfusionMatrix(counts, list(EMOTIONS))
    assert cm.total == 560
    assert round(accuracy(cm), 2) == 0.99


def test_all_wrong():
    assert accuracy(confusion_matrix(["a", "b"], ["b", "a"], ["a", "b"])) == 0.0


def test_hand_precision_recall():
    cm = ConfusionMatrix(np.array([[2, 1], [0, 3]]), ["a", "b"])
    m = per_class_metrics(cm)
    np.testing.assert_allclose(m["precision"], [1.0, 0.75])
    np.testing.assert_allclose(m["recall"], [2 / 3, 1.0])
    np.testing.assert_allclose(m["f1"], [0.8, 6 / 7])


def test_never_predicted_class_has_zero_precision():
    cm = confusion_matrix(["a", "b"], ["a", "a"], ["a", "b"])
    m = per_class_metrics(cm)
    assert m["precision"][1] == 0.0
    assert m["f1"][1] == 0.0
    assert not np.any(np.isnan(m["f1"]))


labels_st = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=80)


@given(labels_st)
def test_matrix_properties(pairs):
    t, p = zip(*pairs)
    cm = confusion_matrix(t, p, range(5))
    assert cm.total == len(pairs)
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(t, minlength=5))
    acc = accuracy(cm)
    assert 0 <= acc <= 1
    assert (acc == 1) == bool(np.all(cm.counts == np.diag(np.diag(cm.counts))))
    # micro-averaged recall: pooled true positives over pooled row totals
    assert np.trace(cm.counts) / cm.counts.sum(axis=1).sum() == acc


def test_renderers_keep_canonical_order():
    y = ["sad", "angry", "neutral"]
    cm = confusion_matrix(y, ["sad", "fear", "neutral"], EMOTIONS)
    rows = list(csv.reader(io.StringIO(render_csv(cm))))
    assert rows[0] == ["true_label", "pred_label", "count"]
    assert len(rows) == 1 + 49
    assert rows[1][:2] == ["angry", "angry"]
    assert ["angry", "fear", "1"] in rows
    doc = json.loads(render_json(cm))
    assert doc == json.loads(json.dumps(report_dict(cm)))
    assert doc["labels"] == list(EMOTIONS)
    assert doc["accuracy"] == pytest.approx(2 / 3)
    text = render_text(cm)
    header = text.splitlines()[0]
    assert header.index("angry") < header.index("disgust") < header.index("pleasant_surprise") < header.index("sad")
    assert "2/3" in text
