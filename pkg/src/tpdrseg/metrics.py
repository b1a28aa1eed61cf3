"""Dice, AUC-ROC and AUC-PR (average precision), with pooled per-class accumulation."""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .config import CLASSES
from .errors import DimensionError, UndefinedMetricError


def _flat(p, g):
    p = np.asarray(p, np.float64).ravel()
    g = np.asarray(g).ravel()
    if p.shape != g.shape:
        raise DimensionError(f"scores {p.shape} and labels {g.shape} differ")
    return p, g.astype(bool)


def dice_from_counts(tp, n_pred, n_true):
    if n_pred + n_true == 0:
        return 1.0
    return 2.0 * tp / (n_pred + n_true)


def dice_score(p, g, threshold=0.5):
    """2|P and G| / (|P| + |G|) after binarizing ``p >= threshold``; 1.0 when both are empty."""
    p = np.asarray(p)
    g = np.asarray(g)
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} and ground truth {g.shape} differ")
    pred = p >= threshold
    truth = g.astype(bool)
    return dice_from_counts(int((pred & truth).sum()), int(pred.sum()), int(truth.sum()))


def auc_roc(scores, labels):
    """Mann-Whitney AUC; tied scores count one half."""
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pr(scores, labels):
    """Average precision: mean over positives of precision at their rank.

    Scores are swept in descending order; ties keep the original index order.
    """
    s, y = _flat(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / n_pos)


@dataclass
class MetricReport:
    dice: dict
    auc_roc: dict
    auc_pr: dict
    samples: int
    notes: list = field(default_factory=list)

    @staticmethod
    def _mean(values):
        vals = [v for v in values.values() if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_dice(self):
        return self._mean(self.dice)

    @property
    def mean_auc_roc(self):
        return self._mean(self.auc_roc)

    @property
    def mean_auc_pr(self):
        return self._mean(self.auc_pr)

    def as_dict(self):
        out = {"samples": self.samples}
        for name, table in (("dice", self.dice), ("auc_roc", self.auc_roc), ("auc_pr", self.auc_pr)):
            for cls in CLASSES:
                v = table.get(cls)
                out[f"{name}.{cls}"] = "nan" if v is None else f"{100 * v:.2f}"
        out["mdice"] = f"{100 * self.mean_dice:.2f}"
        out["mauc_roc"] = f"{100 * self.mean_auc_roc:.2f}"
        out["mauc_pr"] = f"{100 * self.mean_auc_pr:.2f}"
        return out

    def to_kv(self):
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())

    def to_table(self):
        def fmt(v):
            return "   n/a" if v is None else f"{100 * v:6.2f}"

        lines = ["class    Dice  AUC-ROC  AUC-PR", "-" * 31]
        for cls in CLASSES:
            lines.append(f"{cls:<5} {fmt(self.dice.get(cls))}   {fmt(self.auc_roc.get(cls))}  {fmt(self.auc_pr.get(cls))}")
        lines.append("-" * 31)
        lines.append(f"mean  {100 * self.mean_dice:6.2f}   {100 * self.mean_auc_roc:6.2f}  {100 * self.mean_auc_pr:6.2f}")
        lines.append("(AUC-PR is average precision; pixels pooled over all images per class)")
        return "\n".join(lines + self.notes)


class MetricAccumulator:
    """Pools pixels over images, per class. Owned by one thread."""

    def __init__(self, threshold=0.5):
        self.threshold = threshold
        self._scores = {c: [] for c in CLASSES}
        self._labels = {c: [] for c in CLASSES}
        self._counts = {c: [0, 0, 0] for c in CLASSES}  # tp, |P|, |G|
        self._images = set()

    def add(self, sample_id, class_id, prob, mask):
        prob = np.asarray(prob, np.float64)
        mask = np.asarray(mask).astype(bool)
        if prob.shape != mask.shape:
            raise DimensionError(f"prediction {prob.shape} and mask {mask.shape} differ")
        pred = prob >= self.threshold
        c = self._counts[class_id]
        c[0] += int((pred & mask).sum())
        c[1] += int(pred.sum())
        c[2] += int(mask.sum())
        self._scores[class_id].append(prob.ravel())
        self._labels[class_id].append(mask.ravel())
        self._images.add(sample_id)

    def report(self):
        dice, roc, pr = {}, {}, {}
        notes = []
        for cls in CLASSES:
            if not self._scores[cls]:
                dice[cls] = roc[cls] = pr[cls] = None
                continue
            dice[cls] = dice_from_counts(*self._counts[cls])
            s = np.concatenate(self._scores[cls])
            y = np.concatenate(self._labels[cls])
            try:
                roc[cls] = auc_roc(s, y)
                pr[cls] = auc_pr(s, y)
            except UndefinedMetricError:
                roc[cls] = pr[cls] = None
                notes.append(f"{cls}: AUCs undefined (single-class labels)")
        return MetricReport(dice, roc, pr, len(self._images), notes)
