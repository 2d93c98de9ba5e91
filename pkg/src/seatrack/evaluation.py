"""Confusion matrices, micro-averaged metrics and model comparison tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

REPORT_COLUMNS = ("model", "accuracy", "precision", "recall", "f1_paper", "f1_standard")


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.class_names:
            self.class_names = tuple(str(k) for k in range(self.counts.shape[0]))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("true\\pred",) + tuple(self.class_names))
            for name, row in zip(self.class_names, self.counts):
                w.writerow((name,) + tuple(int(v) for v in row))


def confusion(true_labels, pred_labels, classes: int, class_names=()) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ValueError(f"{t.size} true labels vs {p.size} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise ValueError(f"{name} label out of range [0, {classes})")
    counts = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, tuple(class_names))


def _ratio(num, den):
    return num / den if den else None


@dataclass
class ClassMetrics:
    name: str
    support: int
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    specificity: float | None
    accuracy: float | None  # recall of this class; the per-class accuracy of a confusion plot
    f1_standard: float | None
    f1_paper: float | None


@dataclass
class MetricsReport:
    """Micro-averaged metrics.

    ``accuracy`` is ``trace / total``. ``accuracy_ovr`` is the pooled
    one-vs-rest ``(TP + TN) / (TP + FP + FN + TN)``, which coincides with
    ``accuracy`` only for two classes. ``f1_paper`` is
    ``(sensitivity + specificity) / 2`` (balanced accuracy) and
    ``f1_standard`` the harmonic mean of precision and recall.
    """

    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1_standard: float
    f1_paper: float
    accuracy_ovr: float
    per_class: list = field(default_factory=list)
    macro: dict = field(default_factory=dict)

    @property
    def sensitivity(self) -> float:
        return self.recall

    def row(self, model: str) -> dict:
        return {"model": model, "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1_paper": self.f1_paper, "f1_standard": self.f1_standard}


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    c = cm.counts
    total = c.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = total - tp - fp - fn

    per_class = []
    for k, name in enumerate(cm.class_names):
        prec = _ratio(tp[k], tp[k] + fp[k])
        rec = _ratio(tp[k], tp[k] + fn[k])
        spec = _ratio(tn[k], tn[k] + fp[k])
        f1 = None
        if prec is not None and rec is not None:
            f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        bal = (rec + spec) / 2 if rec is not None and spec is not None else None
        per_class.append(ClassMetrics(name, int(tp[k] + fn[k]), int(tp[k]), int(fp[k]), int(fn[k]), int(tn[k]),
                                      prec, rec, spec, rec, f1, bal))

    TP, FP, FN, TN = (int(v.sum()) for v in (tp, fp, fn, tn))
    precision = TP / (TP + FP)
    recall = TP / (TP + FN)
    specificity = TN / (TN + FP) if TN + FP else 1.0
    f1_standard = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    macro = {}
    for attr in ("precision", "recall", "specificity", "f1_standard", "f1_paper"):
        vals = [getattr(m, attr) for m in per_class if getattr(m, attr) is not None]
        macro[attr] = sum(vals) / len(vals) if vals else None

    return MetricsReport(
        accuracy=float(np.trace(c)) / float(total),
        precision=precision, recall=recall, specificity=specificity,
        f1_standard=f1_standard, f1_paper=(recall + specificity) / 2,
        accuracy_ovr=(TP + TN) / (TP + FP + FN + TN),
        per_class=per_class, macro=macro,
    )


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def write_report_csv(rows: list[tuple[str, MetricsReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for name, rep in rows:
            r = rep.row(name)
            w.writerow([name] + [_fmt(r[col]) for col in REPORT_COLUMNS[1:]])


def write_per_class_csv(rep: MetricsReport, path) -> None:
    cols = ("class", "support", "tp", "fp", "fn", "tn", "precision", "recall", "specificity",
            "f1_standard", "f1_paper")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for m in rep.per_class:
            w.writerow((m.name, m.support, m.tp, m.fp, m.fn, m.tn, _fmt(m.precision), _fmt(m.recall),
                        _fmt(m.specificity), _fmt(m.f1_standard), _fmt(m.f1_paper)))


def format_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table, one row per model."""
    head = f"{'model':<10} {'accuracy':>9} {'precision':>9} {'recall':>9} {'f1_paper':>9} {'f1_std':>9}"
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        lines.append(f"{name:<10} {rep.accuracy:>9.4f} {rep.precision:>9.4f} {rep.recall:>9.4f} "
                     f"{rep.f1_paper:>9.4f} {rep.f1_standard:>9.4f}")
    return "\n".join(lines)


def compare(models: dict, x: np.ndarray, y: np.ndarray, class_names=(), csv_path=None):
    """Score every model on the same test set.

    Returns a list of ``(name, MetricsReport, ConfusionMatrix)``; optionally
    writes the report CSV.
    """
    counts = {m.class_count for m in models.values()}
    if len(counts) > 1:
        raise ValueError(f"models disagree on class count: {sorted(counts)}")
    out = []
    for name, model in models.items():
        _, pred, _ = model.predict(x)
        cm = confusion(y, pred, model.class_count, class_names)
        out.append((name, metrics(cm), cm))
    if csv_path is not None:
        write_report_csv([(n, r) for n, r, _ in out], csv_path)
    return out
