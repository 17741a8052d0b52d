"""Scoring metrics: EER, ROC, and rates at a fixed decision threshold.

Convention: label 1 = fake = positive class; an utterance is called fake
when its score is >= the threshold. TPR is the fraction of fakes caught,
TNR the fraction of reals accepted, FPR = 1 - TNR, FNR = 1 - TPR. All
reported rates are percentages.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MetricError


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    ids: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.scores) == len(self.labels) == len(self.ids)):
            raise DataError("scores, labels and ids must have equal lengths")
        if len(self.scores) and not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 (real) or 1 (fake)")

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return ScoreSet(self.scores[mask], self.labels[mask],
                        [i for i, m in zip(self.ids, mask) if m])


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    threshold: float
    bac: float
    tpr: float
    tnr: float
    roc: list = field(repr=False)

    def to_dict(self):
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "threshold": self.threshold,
            "bac": self.bac,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "roc": [[float(f), float(t)] for f, t in self.roc],
        }


def _check_both_classes(s):
    if len(s.scores) == 0 or s.labels.min() == s.labels.max():
        raise MetricError("metric needs both classes present in the score set")


def roc_points(s, with_thresholds=False):
    """Monotone ROC staircase from (0, 0) to (1, 1), one point per
    distinct threshold (swept from above the max score downward)."""
    _check_both_classes(s)
    order = np.argsort(-s.scores, kind="stable")
    sorted_scores = s.scores[order]
    sorted_labels = s.labels[order]
    n_fake = int(sorted_labels.sum())
    n_real = len(sorted_labels) - n_fake
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # keep the last index of each run of equal scores
    distinct = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    fpr = np.concatenate([[0.0], fp[distinct] / n_real])
    tpr = np.concatenate([[0.0], tp[distinct] / n_fake])
    points = list(zip(fpr.tolist(), tpr.tolist()))
    if not with_thresholds:
        return points
    thresholds = np.concatenate([[np.inf], sorted_scores[distinct]])
    return points, thresholds


def compute_eer(s):
    """Equal error rate (percent) and the threshold where FPR crosses FNR.

    The sweep visits distinct-score thresholds; the crossing is located by
    linear interpolation between the bracketing ROC points.
    """
    points, thresholds = roc_points(s, with_thresholds=True)
    fpr = np.array([p[0] for p in points])
    fnr = 1.0 - np.array([p[1] for p in points])
    diff = fpr - fnr  # runs from -1 (strict sweep start) to +1
    for i in range(len(diff)):
        if diff[i] == 0.0:
            return 100.0 * fpr[i], float(min(thresholds[i], 1.0))
        if diff[i] > 0.0:
            # crossing happened between i-1 and i
            d0, d1 = diff[i - 1], diff[i]
            frac = -d0 / (d1 - d0)
            eer = fpr[i - 1] + frac * (fpr[i] - fpr[i - 1])
            t0 = min(float(thresholds[i - 1]), 1.0)
            t1 = float(thresholds[i])
            return 100.0 * eer, t0 + frac * (t1 - t0)
    return 100.0 * fpr[-1], float(thresholds[-1])


def report_at_threshold(s, threshold=0.3):
    """TPR over fakes, TNR over reals, balanced accuracy; fake iff >= t."""
    _check_both_classes(s)
    fake = s.labels == 1
    tpr = 100.0 * float((s.scores[fake] >= threshold).mean())
    tnr = 100.0 * float((s.scores[~fake] < threshold).mean())
    eer, eer_t = compute_eer(s)
    return EvalReport(
        eer=eer,
        eer_threshold=eer_t,
        threshold=threshold,
        bac=(tpr + tnr) / 2.0,
        tpr=tpr,
        tnr=tnr,
        roc=roc_points(s),
    )


# ---- on-disk formats -------------------------------------------------------


def write_scores_csv(path, s, hard_threshold=None):
    """Write ``id,score,label`` rows; a hard threshold binarizes scores."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score", "label"])
        for uid, score, label in zip(s.ids, s.scores, s.labels):
            if hard_threshold is not None:
                score = 1.0 if score >= hard_threshold else 0.0
            writer.writerow([uid, repr(float(score)), int(label)])


def read_scores_csv(path):
    ids, scores, labels = [], [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row[:1] == ["id"]:
                continue
            ids.append(row[0])
            scores.append(float(row[1]))
            labels.append(int(row[2]))
    return ScoreSet(np.array(scores), np.array(labels), ids)


def write_report_json(path, report):
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
