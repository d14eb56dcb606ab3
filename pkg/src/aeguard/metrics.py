"""Detection metrics with "invalid" as the positive class."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DomainError


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def tpr(self):
        p = self.tp + self.fn
        return self.tp / p if p else float("nan")

    @property
    def fpr(self):
        n = self.fp + self.tn
        return self.fp / n if n else float("nan")


def confusion(flagged, labels):
    """``flagged[i]``: detector said invalid; ``labels[i]``: truly invalid."""
    flagged = np.asarray(flagged, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flagged.shape != labels.shape:
        raise DataError(f"{flagged.size} verdicts but {labels.size} labels")
    if flagged.size == 0:
        raise DataError("confusion counts need at least one item")
    return Counts(tp=int(np.sum(flagged & labels)), fp=int(np.sum(flagged & ~labels)),
                  tn=int(np.sum(~flagged & ~labels)), fn=int(np.sum(~flagged & labels)))


def roc_auc(scores, labels):
    """Mann-Whitney AUC (ties count one half) and the ROC polyline.

    Points are ``(fpr, tpr)`` for "flag if score >= t" over the distinct
    scores in decreasing order, starting at (0, 0) and ending at (1, 1).
    ``+inf`` scores are allowed and rank above every finite score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if np.any(np.isnan(scores)) or np.any(scores == -np.inf):
        raise DomainError("scores must be finite or +inf")
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC-AUC needs both valid and invalid items")

    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    auc = float(u / (n_pos * n_neg))

    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    tp, fp = np.cumsum(lab), np.cumsum(~lab)
    last = np.r_[s[1:] != s[:-1], True]  # end of each group of tied scores
    points = [(0.0, 0.0)] + [(fp[i] / n_neg, tp[i] / n_pos) for i in np.flatnonzero(last)]
    return auc, [(float(a), float(b)) for a, b in points]


@dataclass
class EvalReport:
    tpr: float
    fpr: float
    auc: float
    delta: float
    counts: Counts
    roc_points: list = field(default_factory=list)

    def to_json(self):
        d = asdict(self)
        d["roc_points"] = [list(p) for p in self.roc_points]
        return d


def evaluate_scores(flagged, scores, labels, delta, sweep=True):
    counts = confusion(flagged, labels)
    auc, points = roc_auc(scores, labels) if sweep else (float("nan"), [])
    return EvalReport(counts.tpr, counts.fpr, auc, delta, counts, points)


def write_report(report, json_path, csv_path=None):
    with open(json_path, "w") as f:
        json.dump(report.to_json(), f, indent=2)
        f.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["fpr", "tpr"])
            w.writerows((repr(a), repr(b)) for a, b in report.roc_points)
