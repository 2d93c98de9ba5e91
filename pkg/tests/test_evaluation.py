from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seatrack.evaluation import (REPORT_COLUMNS, ConfusionMatrix, compare, confusion, format_table, metrics,
                                 write_per_class_csv, write_report_csv)
from seatrack.models import build_model


def ovr_oracle(counts):
    """Exact one-vs-rest micro metrics with rational arithmetic."""
    c = [[int(v) for v in row] for row in counts]
    n = len(c)
    total = sum(map(sum, c))
    TP = FP = FN = TN = 0
    for k in range(n):
        tp = c[k][k]
        fp = sum(c[i][k] for i in range(n)) - tp
        fn = sum(c[k]) - tp
        TP, FP, FN, TN = TP + tp, FP + fp, FN + fn, TN + total - tp - fp - fn
    sens = Fraction(TP, TP + FN)
    spec = Fraction(TN, TN + FP) if TN + FP else Fraction(1)
    return {"precision": Fraction(TP, TP + FP), "recall": sens, "specificity": spec,
            "accuracy_ovr": Fraction(TP + TN, TP + FP + FN + TN), "f1_paper": (sens + spec) / 2,
            "trace": Fraction(sum(c[k][k] for k in range(n)), total)}


def test_confusion_examples():
    assert confusion([0, 0, 1], [0, 1, 1], 2).counts.tolist() == [[1, 1], [0, 1]]
    assert confusion([0, 1, 2], [0, 1, 2], 3).counts.tolist() == np.eye(3, dtype=int).tolist()
    assert confusion([], [], 3).counts.tolist() == [[0] * 3] * 3
    with pytest.raises(ValueError):
        confusion([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 3)


def test_three_sample_fixture():
    rep = metrics(confusion([0, 0, 1], [0, 1, 1], 2))
    assert abs(rep.sensitivity - 2 / 3) <= 1e-12
    assert abs(rep.accuracy - 2 / 3) <= 1e-12
    assert abs(rep.accuracy_ovr - 4 / 6) <= 1e-12
    assert abs(rep.specificity - 2 / 3) <= 1e-12
    assert abs(rep.f1_paper - 2 / 3) <= 1e-12


def test_diagonal_is_perfect():
    rep = metrics(ConfusionMatrix(np.diag([3, 1, 4])))
    for v in (rep.accuracy, rep.precision, rep.recall, rep.specificity, rep.f1_standard, rep.f1_paper,
              rep.accuracy_ovr):
        assert v == 1.0


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(np.zeros((2, 2))))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, 50), min_size=n, max_size=n), min_size=n, max_size=n)))
def test_micro_identities_against_exact_oracle(rows):
    counts = np.array(rows)
    if counts.sum() == 0:
        counts[0, 0] = 1
    rep = metrics(ConfusionMatrix(counts))
    exact = ovr_oracle(counts)
    assert abs(rep.precision - rep.recall) <= 1e-12
    assert abs(rep.precision - rep.accuracy) <= 1e-12
    assert abs(rep.accuracy - float(exact["trace"])) <= 1e-12
    for key in ("precision", "recall", "specificity", "accuracy_ovr", "f1_paper"):
        assert abs(getattr(rep, key) - float(exact[key])) <= 1e-12
    p, r = exact["precision"], exact["recall"]
    assert abs(rep.f1_standard - (float(2 * p * r / (p + r)) if p + r else 0.0)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.permutations(range(5)))
def test_class_permutation_and_self_agreement(y, perm):
    y = np.array(y)
    g = np.random.default_rng(len(y))
    pred = np.where(g.random(len(y)) < 0.3, g.integers(0, 5, len(y)), y)
    base = metrics(confusion(y, pred, 5))
    perm = np.array(perm)
    moved = metrics(confusion(perm[y], perm[pred], 5))
    for key in ("accuracy", "precision", "recall", "specificity", "f1_paper", "f1_standard"):
        assert abs(getattr(base, key) - getattr(moved, key)) <= 1e-12
    for k in range(5):
        assert base.per_class[k].tp == moved.per_class[perm[k]].tp
    perfect = metrics(confusion(y, y, 5))
    assert perfect.accuracy == perfect.precision == perfect.recall == perfect.f1_standard == 1.0


def test_undefined_per_class_values(tmp_path):
    rep = metrics(confusion([0, 0, 1], [0, 0, 1], 3, ("a", "b", "c")))
    c = rep.per_class[2]
    assert c.support == 0 and c.recall is None and c.precision is None and c.f1_standard is None
    assert c.specificity == 1.0
    assert rep.macro["recall"] == 1.0
    path = tmp_path / "pc.csv"
    write_per_class_csv(rep, path)
    assert "undefined" in path.read_text().splitlines()[3]


def test_report_csv_and_table(tmp_path):
    rep = metrics(confusion([0, 0, 1], [0, 1, 1], 2))
    path = tmp_path / "m.csv"
    write_report_csv([("cnn-lstm", rep)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS) == "model,accuracy,precision,recall,f1_paper,f1_standard"
    assert lines[1].startswith("cnn-lstm,0.666667,0.666667,0.666667,")
    table = format_table([("cnn-lstm", rep)])
    assert "f1_paper" in table and "0.6667" in table


def test_confusion_csv(tmp_path):
    cm = confusion([0, 0, 1], [0, 1, 1], 2, ("vessel 1", "vessel 2"))
    path = tmp_path / "cm.csv"
    cm.write_csv(path)
    assert path.read_text().splitlines() == ["true\\pred,vessel 1,vessel 2", "vessel 1,1,1", "vessel 2,0,1"]


def test_compare_duplicates_and_mismatch(tmp_path):
    m = build_model("ann", 3, seed=1)
    x = np.random.default_rng(0).normal(size=(30, 4, 1)).astype(np.float32)
    y = np.random.default_rng(1).integers(0, 3, 30)
    rows = compare({"a": m, "b": m}, x, y, csv_path=tmp_path / "c.csv")
    assert rows[0][1] == rows[1][1]
    out = (tmp_path / "c.csv").read_text().splitlines()
    assert out[1].split(",")[1:] == out[2].split(",")[1:]
    with pytest.raises(ValueError):
        compare({"a": m, "b": build_model("ann", 4)}, x, y)
