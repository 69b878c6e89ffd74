"""Evaluation metrics: average precision, ROC AUC, F1, calibration error.

Conventions are pinned so results are reproducible and oracle-checkable:

* AP is non-interpolated: sort by score descending (ties broken by original
  order via a stable sort) and average precision at each positive rank.
* AUC uses the Mann-Whitney formulation: the fraction of
  (positive, negative) pairs ranked correctly, ties counting 0.5.
* F1 thresholds with ``score >= threshold`` and returns 0 when the
  denominator 2TP + FP + FN is 0.
* ECE uses equal-width bins on [0, 1], right-closed with bin 0 left-closed;
  empty bins contribute nothing.

Per-class metrics that are undefined (AP with no positives, AUC with a
single class present) are skipped and reported, never imputed as 0.
"""

from dataclasses import dataclass

import numpy as np

from .data import LabelMatrix, ScoreMatrix


@dataclass
class EceConfig:
    n_bins: int = 15
    binning: str = "equal-width"

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.binning != "equal-width":
            raise ValueError(f"unsupported binning {self.binning!r}")


@dataclass
class MetricReport:
    per_class: dict
    macro: dict
    skipped_classes: list

    def to_json_dict(self) -> dict:
        return {
            "per_class": self.per_class,
            "macro": self.macro,
            "skipped_classes": self.skipped_classes,
        }


def _as_1d(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels length mismatch")
    return scores, labels


def average_precision(scores, labels):
    """Non-interpolated AP; None when the class has no positive labels."""
    scores, labels = _as_1d(scores, labels)
    positive = labels == 1
    n_pos = int(positive.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    pos_sorted = positive[order]
    cum_pos = np.cumsum(pos_sorted)
    ranks = np.arange(1, scores.size + 1)
    precision_at_pos = cum_pos[pos_sorted] / ranks[pos_sorted]
    return float(precision_at_pos.sum() / n_pos)


def auc_roc(scores, labels):
    """Mann-Whitney AUC with 0.5 tie credit; None when one class is absent."""
    scores, labels = _as_1d(scores, labels)
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average rank over the tie group gives exactly 0.5 credit per tied pair
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[positive].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_at_threshold(scores, labels, threshold: float) -> float:
    scores, labels = _as_1d(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2.0 * tp / denom


def ece(scores, labels, cfg: EceConfig) -> float:
    """Expected calibration error over equal-width confidence bins."""
    scores, labels = _as_1d(scores, labels)
    if (scores < 0).any() or (scores > 1).any():
        raise ValueError("ECE requires scores in [0, 1]")
    n_bins = cfg.n_bins
    idx = np.ceil(scores * n_bins).astype(np.int64) - 1
    idx[scores == 0.0] = 0
    idx = np.clip(idx, 0, n_bins - 1)
    total = 0.0
    n = scores.size
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        confidence = scores[mask].mean()
        positive_rate = (labels[mask] == 1).mean()
        total += (count / n) * abs(confidence - positive_rate)
    return float(total)


def macro_report(
    scores: ScoreMatrix,
    labels: LabelMatrix,
    threshold: float = 0.5,
    ece_cfg: EceConfig = None,
) -> MetricReport:
    """Per-class AP/AUC/F1/ECE plus macro means over the defined classes."""
    if ece_cfg is None:
        ece_cfg = EceConfig()
    if scores.kind != "probabilities":
        raise ValueError("macro_report requires probability scores")
    if scores.class_names != labels.class_names:
        raise ValueError("class name misalignment between scores and labels")
    if scores.ids != labels.ids:
        raise ValueError("id misalignment between scores and labels")

    per_class = {}
    skipped = []
    for j, name in enumerate(labels.class_names):
        col_scores = scores.values[:, j]
        col_labels = labels.values[:, j]
        ap = average_precision(col_scores, col_labels)
        auc = auc_roc(col_scores, col_labels)
        if ap is None:
            skipped.append({"class": name, "metric": "ap", "reason": "no positive labels"})
        if auc is None:
            skipped.append(
                {"class": name, "metric": "auc", "reason": "needs a positive and a negative"}
            )
        per_class[name] = {
            "ap": ap,
            "auc": auc,
            "f1": f1_at_threshold(col_scores, col_labels, threshold),
            "ece": ece(col_scores, col_labels, ece_cfg),
        }

    macro = {}
    for key, macro_key in (("ap", "map"), ("auc", "mauc"), ("f1", "mf1"), ("ece", "mece")):
        defined = [m[key] for m in per_class.values() if m[key] is not None]
        macro[macro_key] = float(np.mean(defined)) if defined else None
    return MetricReport(per_class=per_class, macro=macro, skipped_classes=skipped)
