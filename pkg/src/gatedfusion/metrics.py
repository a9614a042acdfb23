"""Session-level evaluation: confusion counts, weighted F1, bootstrap CI, AUC.

All metrics start from integer class labels 0..K-1. The confusion matrix is
oriented rows = true class, columns = predicted class, so class supports are
row sums.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("labels and predictions must be equal-length 1-D")
    if y_true.size == 0:
        raise ValueError("cannot build a confusion matrix from zero sessions")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} labels must lie in [0, {n_classes})")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (y_true, y_pred), 1)
    return out


def precision_recall_f1(confusion: np.ndarray):
    """Per-class precision, recall, F1 and support from a confusion matrix.

    Any zero denominator (empty predicted column, empty true row, or both
    precision and recall zero) yields 0 for the affected statistic rather
    than a NaN.
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    pred_totals = confusion.sum(axis=0)
    support = confusion.sum(axis=1)

    precision = np.where(pred_totals > 0, tp / np.where(pred_totals > 0, pred_totals, 1), 0.0)
    recall = np.where(support > 0, tp / np.where(support > 0, support, 1), 0.0)
    pr = precision + recall
    f1 = np.where(pr > 0, 2 * precision * recall / np.where(pr > 0, pr, 1), 0.0)
    return precision, recall, f1, support


def weighted_f1(confusion: np.ndarray) -> float:
    """Support-weighted mean of the per-class F1 scores."""
    _, _, f1, support = precision_recall_f1(confusion)
    total = support.sum()
    if total == 0:
        raise ValueError("confusion matrix has no sessions")
    return float((f1 * support).sum() / total)


def accuracy(confusion: np.ndarray) -> float:
    confusion = np.asarray(confusion, dtype=np.float64)
    return float(np.trace(confusion) / confusion.sum())


def bootstrap_f1_ci(
    y_true,
    y_pred,
    n_classes: int,
    n_resamples: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
):
    """Percentile bootstrap interval for the weighted F1.

    Resamples (true, predicted) session pairs with replacement ``n_resamples``
    times and takes the alpha/2 and 1-alpha/2 percentiles (linear
    interpolation) of the replicate statistics. Deterministic for a fixed
    seed. Returns (low, high).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    n = y_true.size
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        stats[b] = weighted_f1(confusion_matrix(y_true[idx], y_pred[idx], n_classes))
    low, high = np.percentile(stats, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(low), float(high)


def one_vs_rest_auc(y_true, scores):
    """Support-weighted one-vs-rest AUC from per-class scores.

    ``scores`` is (n_sessions, n_classes); larger means more confident. Each
    class AUC uses the midrank formulation, which matches pairwise counting
    with ties worth 1/2. Classes without both a positive and a negative
    session are undefined: they are excluded from the average with a warning.
    Returns (weighted_auc, per_class_auc list with None for undefined).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != y_true.size:
        raise ValueError("scores must be (n_sessions, n_classes)")
    n_classes = scores.shape[1]

    per_class = []
    aucs, weights = [], []
    for c in range(n_classes):
        pos = y_true == c
        n_pos = int(pos.sum())
        n_neg = y_true.size - n_pos
        if n_pos == 0 or n_neg == 0:
            warnings.warn(
                f"class {c} has no {'positive' if n_pos == 0 else 'negative'} "
                "sessions; its AUC is undefined and excluded from the average"
            )
            per_class.append(None)
            continue
        ranks = rankdata(scores[:, c])  # midranks: ties share the average rank
        auc_c = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        per_class.append(float(auc_c))
        aucs.append(auc_c)
        weights.append(n_pos)
    if not aucs:
        raise ValueError("AUC undefined for every class")
    weighted = float(np.average(aucs, weights=weights))
    return weighted, per_class


def parse_confusion(text: str) -> np.ndarray:
    """Parse a bracketed integer matrix like ``[[6,2,0],[2,5,2],[1,1,4]]``."""
    try:
        rows = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not a bracketed matrix: {text!r}") from exc
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ValueError("expected a list of rows")
    n = len(rows)
    out = np.zeros((n, n), dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ValueError(f"row {i} has {len(row)} entries, expected {n}")
        for j, v in enumerate(row):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"entry ({i},{j}) must be a non-negative integer")
            out[i, j] = v
    return out


@dataclass
class EvalReport:
    """Everything the evaluation stage reports for one model on one split."""

    confusion: list
    accuracy: float
    weighted_f1: float
    f1_ci_low: float
    f1_ci_high: float
    per_class: list  # dicts: class, precision, recall, f1, support
    auc_weighted: float = None
    auc_per_class: list = None
    class_names: list = field(default_factory=list)
    n_sessions: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(
    y_true,
    y_pred,
    scores=None,
    n_classes: int = None,
    class_names=None,
    bootstrap_seed: int = 0,
    n_resamples: int = 1000,
) -> EvalReport:
    """Full session-level report: confusion, accuracy, F1 with CI, AUC."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    conf = confusion_matrix(y_true, y_pred, n_classes)
    precision, recall, f1, support = precision_recall_f1(conf)
    low, high = bootstrap_f1_ci(
        y_true, y_pred, n_classes, n_resamples=n_resamples, seed=bootstrap_seed
    )
    names = list(class_names) if class_names else [str(c) for c in range(n_classes)]
    per_class = [
        {
            "class": names[c],
            "precision": float(precision[c]),
            "recall": float(recall[c]),
            "f1": float(f1[c]),
            "support": int(support[c]),
        }
        for c in range(n_classes)
    ]
    auc_weighted = auc_per_class = None
    if scores is not None:
        auc_weighted, auc_per_class = one_vs_rest_auc(y_true, scores)
    return EvalReport(
        confusion=conf.tolist(),
        accuracy=accuracy(conf),
        weighted_f1=weighted_f1(conf),
        f1_ci_low=low,
        f1_ci_high=high,
        per_class=per_class,
        auc_weighted=auc_weighted,
        auc_per_class=auc_per_class,
        class_names=names,
        n_sessions=int(y_true.size),
    )
