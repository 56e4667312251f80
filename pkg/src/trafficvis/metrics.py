"""Confusion-matrix accounting and the accuracy / precision / recall / F1 rates."""
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence, Tuple

from .errors import DegenerateDenominator, EmptyInput, LengthMismatch
from .labels import LABELS, MALICIOUS, label_name


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int
    positive_class: str = MALICIOUS

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.positive_class not in LABELS:
            raise ValueError(f"positive_class must be one of {LABELS}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """Same predictions viewed with the other class as positive."""
        other = LABELS[1 - LABELS.index(self.positive_class)]
        return ConfusionMatrix(self.tn, self.tp, self.fn, self.fp, other)

    def scaled(self, k: int) -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp * k, self.tn * k, self.fp * k, self.fn * k, self.positive_class)


def confusion(truth: Sequence, predicted: Sequence, positive_class: str = MALICIOUS) -> ConfusionMatrix:
    if len(truth) != len(predicted):
        raise LengthMismatch(f"{len(truth)} truth labels vs {len(predicted)} predictions")
    if not truth:
        raise EmptyInput("confusion matrix of zero predictions")
    pos = label_name(positive_class)
    tp = tn = fp = fn = 0
    for t, p in zip(truth, predicted):
        t_pos = label_name(t) == pos
        p_pos = label_name(p) == pos
        if t_pos and p_pos:
            tp += 1
        elif t_pos:
            fn += 1
        elif p_pos:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, tn, fp, fn, pos)


def _ratio(num, den, what):
    if den == 0:
        raise DegenerateDenominator(f"{what} undefined: zero denominator")
    return num / den


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total, "accuracy")


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp, "precision")


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn, "recall")


def f1_from(p: float, r: float) -> float:
    """Harmonic mean of a precision and a recall."""
    return _ratio(2 * p * r, p + r, "F1")


def f1(cm: ConfusionMatrix) -> float:
    return f1_from(precision(cm), recall(cm))


def summary(cm: ConfusionMatrix) -> "OrderedDict[str, float]":
    """A, P, R, F1 in report column order."""
    return OrderedDict([("accuracy", accuracy(cm)), ("precision", precision(cm)),
                        ("recall", recall(cm)), ("f1", f1(cm))])


def per_family_accuracy(records: Iterable[Tuple[str, object, object]]) -> Dict[str, float]:
    """Fraction of correct predictions per family tag, in first-seen order."""
    correct: Dict[str, int] = {}
    seen: Dict[str, int] = {}
    for family, truth, pred in records:
        seen[family] = seen.get(family, 0) + 1
        correct[family] = correct.get(family, 0) + (label_name(truth) == label_name(pred))
    if not seen:
        raise EmptyInput("no records")
    return {f: correct[f] / seen[f] for f in seen}


def report_csv(cm: ConfusionMatrix, families: Mapping[str, float] = None) -> str:
    """Evaluation report.

    ``metric,value`` rows (A, P, R, F1, then the raw counts), a
    ``family,<name>,accuracy`` row per family, and a final aggregate line
    ``A,P,R,F1`` with its values.
    """
    rows = ["metric,value"]
    stats = OrderedDict()
    for name, fn in (("accuracy", accuracy), ("precision", precision), ("recall", recall), ("f1", f1)):
        try:
            stats[name] = f"{fn(cm):.6f}"
        except DegenerateDenominator:
            stats[name] = "nan"
    rows += [f"{k},{v}" for k, v in stats.items()]
    rows += [f"{k},{getattr(cm, k)}" for k in ("tp", "tn", "fp", "fn")]
    rows.append(f"positive_class,{cm.positive_class}")
    for fam, acc in (families or {}).items():
        rows.append(f"family,{fam},{acc:.6f}")
    rows.append("A,P,R,F1")
    rows.append(",".join(stats.values()))
    return "\n".join(rows) + "\n"
