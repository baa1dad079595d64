"""Evaluation metrics: ratio-of-sums SMAPE, macro-F1, confusion matrices."""
from dataclasses import dataclass, field

import numpy as np

SMAPE_EPS = 1e-7


def smape_eval(pred, truth, clamp=True):
    """SMAPE as one ratio of sums: sum|p - y| / (sum(y + p) + eps).

    With ``clamp`` (the reporting default) negative predictions are set to 0
    first. Returns just the value; use :func:`clamp_count` for the count.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(truth, dtype=np.float64).reshape(-1)
    if p.size != y.size:
        raise ValueError(f"length mismatch: {p.size} vs {y.size}")
    if clamp:
        p = np.maximum(p, 0.0)
    return float(np.abs(p - y).sum() / ((y + p).sum() + SMAPE_EPS))


def clamp_count(pred):
    return int(np.sum(np.asarray(pred) < 0))


def _binary(labels, what):
    a = np.asarray(labels).reshape(-1)
    if a.size == 0:
        raise ValueError(f"{what}: empty input")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{what}: labels must be binary")
    return a.astype(np.int64)


def confusion_counts(pred_labels, truth_labels):
    """2x2 counts indexed [true class, predicted class] (0 = non-churner)."""
    p = _binary(pred_labels, "predictions")
    t = _binary(truth_labels, "truth")
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts


def confusion_matrix(pred_labels, truth_labels, normalize="true"):
    """Return (row-normalised proportions, raw counts).

    A true class with no examples gets an all-zero row.
    """
    counts = confusion_counts(pred_labels, truth_labels)
    if normalize != "true":
        raise ValueError("only normalize='true' (by true row) is supported")
    rows = counts.sum(axis=1, keepdims=True)
    props = np.divide(counts, rows, out=np.zeros((2, 2)), where=rows > 0)
    return props, counts


def f1_from_counts(tp, fp, fn):
    # zero-support convention: no predicted and no actual positives -> 0
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def per_class_scores(counts):
    """Precision/recall/F1 for each class taken as the positive one."""
    out = {}
    for k in (0, 1):
        tp = counts[k, k]
        fp = counts[1 - k, k]
        fn = counts[k, 1 - k]
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out[k] = (float(prec), float(rec), f1_from_counts(tp, fp, fn))
    return out


def macro_f1_from_counts(counts):
    s = per_class_scores(np.asarray(counts))
    return 0.5 * (s[0][2] + s[1][2])


@dataclass
class EvalReport:
    smape: float
    macro_f1: float
    precision: tuple
    recall: tuple
    f1: tuple
    confusion_counts: np.ndarray
    n_clamped: int = 0
    per_game: dict = field(default_factory=dict)

    @property
    def n(self):
        return int(self.confusion_counts.sum())


def macro_f1(pred_labels, truth_labels):
    counts = confusion_counts(pred_labels, truth_labels)
    return macro_f1_from_counts(counts)


def evaluate(survival_pred, survival_true, churn_pred, churn_true, games=None):
    """Build an :class:`EvalReport`, optionally with a per-game breakdown."""
    counts = confusion_counts(churn_pred, churn_true)
    s = per_class_scores(counts)
    report = EvalReport(
        smape=smape_eval(survival_pred, survival_true),
        macro_f1=0.5 * (s[0][2] + s[1][2]),
        precision=(s[0][0], s[1][0]),
        recall=(s[0][1], s[1][1]),
        f1=(s[0][2], s[1][2]),
        confusion_counts=counts,
        n_clamped=clamp_count(survival_pred),
    )
    if games is not None:
        games = np.asarray(games)
        sp, st = np.asarray(survival_pred), np.asarray(survival_true)
        cp, ct = np.asarray(churn_pred), np.asarray(churn_true)
        for g in np.unique(games):
            sel = games == g
            report.per_game[int(g)] = evaluate(sp[sel], st[sel], cp[sel], ct[sel])
    return report
