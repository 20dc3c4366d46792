"""Classifier evaluation: AUC, accuracy, MCC, time-partitioned variance,
and decision-curve net benefit.

AUC uses the rank-statistic (Mann-Whitney) form with midranks for ties,
which equals the exhaustive pairwise count exactly. Net benefit at a
threshold probability p is ``TP/N - FP/N * p/(1-p)`` with a subject
treated when its predicted probability reaches p; the treat-all and
treat-none policies serve as references.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, SingleClassError

log = logging.getLogger(__name__)

DCA_DEFAULT_THRESHOLDS = np.arange(1, 100) / 100.0
# Threshold band singled out in reports as the clinically interesting range.
DCA_FLAGGED_BAND = (0.30, 0.70)
DEFAULT_TEST_PARTS = 5


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative
    (ties count half)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be aligned 1D arrays")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both classes present")
    ranks = rankdata(s, method="average")
    pos_rank_sum = float(ranks[y].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def confusion(predictions, labels) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) counts; anything > 0 is the positive class."""
    pred = np.asarray(predictions) > 0
    y = np.asarray(labels) > 0
    if pred.shape != y.shape:
        raise DataError(f"length mismatch: {pred.shape} predictions vs {y.shape} labels")
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    tn = int(np.sum(~pred & ~y))
    fn = int(np.sum(~pred & y))
    return tp, fp, tn, fn


def accuracy(tp: int, fp: int, tn: int, fn: int) -> float:
    total = tp + fp + tn + fn
    if total == 0:
        raise DataError("empty confusion counts")
    return (tp + tn) / total


def mcc(tp: int, fp: int, tn: int, fn: int) -> float:
    """Matthews correlation; returns 0 when any marginal is empty."""
    for name, value in (("TP", tp), ("FP", fp), ("TN", tn), ("FN", fn)):
        if value < 0:
            raise DataError(f"negative {name} count: {value}")
    if tp + fp + tn + fn < 1:
        raise DataError("empty confusion counts")
    denom_sq = float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom_sq == 0.0:
        return 0.0
    return (float(tp) * tn - float(fp) * fn) / np.sqrt(denom_sq)


@dataclass
class DcaCurve:
    """Net benefit of the model against treat-all and treat-none policies."""

    thresholds: np.ndarray
    nb_model: np.ndarray
    nb_all: np.ndarray
    nb_none: np.ndarray
    n: int
    prevalence: float

    def flagged_band(self, low: float = DCA_FLAGGED_BAND[0], high: float = DCA_FLAGGED_BAND[1]):
        """Mean model advantage over the better reference inside the band."""
        mask = (self.thresholds >= low) & (self.thresholds <= high)
        reference = np.maximum(self.nb_all[mask], self.nb_none[mask])
        return float(np.mean(self.nb_model[mask] - reference))


def dca_curve(probabilities, labels, thresholds=None) -> DcaCurve:
    """Decision-curve analysis over a threshold-probability grid."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels) > 0
    if p.shape != y.shape or p.ndim != 1:
        raise DataError("probabilities and labels must be aligned 1D arrays")
    if np.any((p < 0) | (p > 1)):
        raise DataError("probabilities must lie in [0, 1]")
    thr = DCA_DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(thr <= 0.0) or np.any(thr >= 1.0):
        raise DataError("thresholds must lie strictly inside (0, 1)")
    n = p.size
    if n == 0:
        raise DataError("empty evaluation set")
    prevalence = float(y.mean())
    odds = thr / (1.0 - thr)
    treated = p[None, :] >= thr[:, None]
    tp = np.sum(treated & y[None, :], axis=1) / n
    fp = np.sum(treated & ~y[None, :], axis=1) / n
    nb_model = tp - fp * odds
    nb_all = prevalence - (1.0 - prevalence) * odds
    return DcaCurve(
        thresholds=thr,
        nb_model=nb_model,
        nb_all=nb_all,
        nb_none=np.zeros_like(thr),
        n=n,
        prevalence=prevalence,
    )


def temporal_split(timestamps, subject_ids, train_fraction: float):
    """Index split into early-diagnosis training and late-diagnosis test rows.

    Rows are ordered by timestamp with subject id as a stable tie-break;
    the first ``floor(train_fraction * M)`` go to training.
    """
    ids = list(subject_ids)
    stamps = list(timestamps)
    if len(ids) != len(stamps):
        raise DataError("timestamps and subject ids disagree on length")
    missing = [sid for sid, ts in zip(ids, stamps) if ts is None]
    if missing:
        raise DataError(f"missing diagnosis timestamps for subjects: {', '.join(missing)}")
    if not 0.0 <= train_fraction <= 1.0:
        raise DataError(f"train fraction must be in [0, 1], got {train_fraction}")
    order = sorted(range(len(ids)), key=lambda i: (stamps[i], ids[i]))
    cut = int(np.floor(train_fraction * len(ids)))
    train_idx = np.asarray(order[:cut], dtype=np.int64)
    test_idx = np.asarray(order[cut:], dtype=np.int64)
    if test_idx.size == 0:
        log.warning("temporal split produced an empty test set (fraction %.3f)", train_fraction)
    return train_idx, test_idx


def partitioned_std(timestamps, subject_ids, metric_fn, parts: int = DEFAULT_TEST_PARTS):
    """Metric mean and population std over contiguous time-ordered chunks.

    ``metric_fn`` receives the index array of one chunk. Chunks where the
    metric is undefined (SingleClassError) are skipped with a warning.
    """
    ids = list(subject_ids)
    stamps = list(timestamps)
    if len(ids) < parts:
        raise DataError(f"cannot split {len(ids)} rows into {parts} parts")
    order = sorted(range(len(ids)), key=lambda i: (stamps[i], ids[i]))
    chunks = np.array_split(np.asarray(order, dtype=np.int64), parts)
    values = []
    for k, chunk in enumerate(chunks):
        try:
            values.append(float(metric_fn(chunk)))
        except SingleClassError:
            log.warning("metric undefined on test partition %d of %d; skipped", k + 1, parts)
    if not values:
        raise DataError("metric undefined on every test partition")
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std()), values


@dataclass
class EvalReport:
    """Test-set metrics for one model family at one resolution."""

    model: str
    resolution: int
    auc: float
    accuracy: float
    mcc: float
    auc_std: float = 0.0
    accuracy_std: float = 0.0
    mcc_std: float = 0.0
    per_part: dict = field(default_factory=dict)
    best_c: float = float("nan")
