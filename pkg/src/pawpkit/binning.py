"""Quality control of training samples by landmark-uncertainty quantile bins.

All landmark uncertainties of the training samples are pooled (both
modalities together when both are in use) and split into equal-count
quantile bins. Bins are discarded one at a time from the most uncertain
end while a validation callback keeps improving; a sample is discarded as
soon as any one of its landmarks falls into a removed bin.

Frozen conventions: quantile edges use linear interpolation between order
statistics, and a value equal to an edge belongs to the lower (less
uncertain) bin.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ValidationAbort

log = logging.getLogger(__name__)

# Consecutive non-improving validation iterations before the removal loop stops.
STOP_PATIENCE = 2


@dataclass
class QuantileBinning:
    """Equal-count uncertainty bins plus the removal bookkeeping."""

    bin_count: int
    edges: np.ndarray  # (bin_count - 1,) non-decreasing thresholds
    removal_order: list[int] = field(default_factory=list)  # bins, most uncertain first
    history: list[tuple[int, float]] = field(default_factory=list)  # (bins_removed, val auc)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        if not self.removal_order:
            self.removal_order = list(range(self.bin_count, 0, -1))

    def assign(self, values) -> np.ndarray:
        """1-based bin index per value; edge ties go to the lower bin."""
        values = np.asarray(values, dtype=np.float64)
        return np.searchsorted(self.edges, values, side="left") + 1


def quantile_edges(uncertainties, bin_count: int) -> QuantileBinning:
    """Build ``bin_count`` equal-count bins over the pooled uncertainties."""
    values = np.asarray(uncertainties, dtype=np.float64)
    if bin_count < 2:
        raise DataError(f"need at least 2 bins, got {bin_count}")
    if values.ndim != 1 or values.size < bin_count:
        raise DataError(
            f"need at least {bin_count} uncertainty values, got {values.size}"
        )
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite uncertainty values")
    probs = np.arange(1, bin_count) / bin_count
    edges = np.quantile(values, probs)  # linear interpolation between order stats
    return QuantileBinning(bin_count=bin_count, edges=edges)


def _sample_max_bin(binning: QuantileBinning, dataset_ids, landmarks) -> dict:
    """Worst (highest) bin over each sample's landmarks; None when no landmarks."""
    per_sample: dict = {sid: None for sid in dataset_ids}
    for record in landmarks:
        sid = record.subject_id
        if sid not in per_sample:
            continue
        worst = int(binning.assign(record.uncertainties).max())
        prev = per_sample[sid]
        per_sample[sid] = worst if prev is None else max(prev, worst)
    return per_sample


def filter_samples(dataset_ids, landmarks, binning: QuantileBinning, removed_bin_count: int):
    """Subject ids surviving after removing the top ``removed_bin_count`` bins.

    A sample survives iff every one of its landmark uncertainties lies
    outside the removed bins. Samples with no landmark data count as
    maximally uncertain: they are removed as soon as any bin is.
    """
    if not 0 <= removed_bin_count <= binning.bin_count:
        raise DataError(
            f"removed_bin_count must be in [0, {binning.bin_count}], got {removed_bin_count}"
        )
    dataset_ids = list(dataset_ids)
    if removed_bin_count == 0:
        return dataset_ids
    cutoff = binning.bin_count - removed_bin_count
    per_sample = _sample_max_bin(binning, dataset_ids, landmarks)
    survivors = []
    for sid in dataset_ids:
        worst = per_sample[sid]
        if worst is None:
            log.warning("sample %s has no landmark data; treated as maximally uncertain", sid)
            continue
        if worst <= cutoff:
            survivors.append(sid)
    return survivors


def iterative_bin_removal(dataset_ids, landmarks, binning: QuantileBinning, validate,
                          min_survivors: int = 1):
    """Remove bins from the most uncertain end while validation improves.

    ``validate`` maps a list of surviving subject ids to a validation AUC.
    Starting from 0 removed bins, one more bin is removed per iteration;
    the loop stops once the AUC has failed to exceed the running best for
    STOP_PATIENCE consecutive iterations, when all bins are gone, or when
    fewer than ``min_survivors`` samples remain (too few to validate,
    treated like exhausted bins).

    Returns (chosen_removal_count, history) where the chosen count achieves
    the best AUC (earliest on ties) and history lists
    (bins_removed, surviving_ids, val_auc) per iteration.
    """
    history = []
    best = -np.inf
    dry_spell = 0
    for removed in range(0, binning.bin_count + 1):
        survivors = filter_samples(dataset_ids, landmarks, binning, removed)
        if removed > 0 and len(survivors) < max(min_survivors, 1):
            log.warning("stopping bin removal at %d bins: only %d samples left",
                        removed, len(survivors))
            break
        try:
            auc = float(validate(survivors))
        except Exception as exc:
            raise ValidationAbort(
                f"validation failed at {removed} removed bins: {exc}", history
            ) from exc
        history.append((removed, survivors, auc))
        if auc > best:
            best = auc
            dry_spell = 0
        elif removed > 0:
            dry_spell += 1
            if dry_spell >= STOP_PATIENCE:
                break
    aucs = [auc for _, _, auc in history]
    chosen = int(np.argmax(aucs))  # earliest index on ties
    binning.history = [(removed, auc) for removed, _, auc in history]
    return chosen, history
