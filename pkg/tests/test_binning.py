import numpy as np
import pytest

from pawpkit.binning import (
    QuantileBinning,
    filter_samples,
    iterative_bin_removal,
    quantile_edges,
)
from pawpkit.errors import DataError, ValidationAbort
from pawpkit.registration import LandmarkRecord
from pawpkit.tensor import Modality


def record(sid, uncertainties, modality=Modality.SHORT_AXIS):
    pts = np.array([[2.0, 2.0], [2.0, 8.0], [8.0, 5.0]])
    return LandmarkRecord(sid, modality, pts, np.asarray(uncertainties, dtype=float))


class TestQuantileEdges:
    def test_equal_count_partition(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(size=100)
        binning = quantile_edges(values, 50)
        counts = np.bincount(binning.assign(values) - 1, minlength=50)
        assert set(counts.tolist()) == {2}

    def test_interpolated_median(self):
        binning = quantile_edges(np.arange(1.0, 11.0), 2)
        assert binning.edges.shape == (1,)
        assert binning.edges[0] == pytest.approx(5.5)  # interpolated-median oracle

    def test_all_equal_values_go_to_bin_one(self):
        binning = quantile_edges(np.full(20, 3.3), 4)
        assert np.all(binning.edges == 3.3)
        assert np.all(binning.assign(np.full(20, 3.3)) == 1)

    def test_rejects_too_few_values(self):
        with pytest.raises(DataError):
            quantile_edges(np.arange(3.0), 5)
        with pytest.raises(DataError):
            quantile_edges(np.arange(10.0), 1)

    def test_removal_order_is_most_uncertain_first(self):
        binning = quantile_edges(np.arange(50.0), 5)
        assert binning.removal_order == [5, 4, 3, 2, 1]


class TestFilterSamples:
    def make(self):
        # 10 samples, uncertainty of sample i concentrated around i
        ids = [f"S{i}" for i in range(10)]
        records = [record(sid, [i, i + 0.1, i + 0.2]) for i, sid in enumerate(ids)]
        pooled = np.concatenate([r.uncertainties for r in records])
        return ids, records, quantile_edges(pooled, 5)

    def test_zero_removed_is_identity(self):
        ids, records, binning = self.make()
        assert filter_samples(ids, records, binning, 0) == ids

    def test_all_removed_is_empty(self):
        ids, records, binning = self.make()
        assert filter_samples(ids, records, binning, 5) == []

    def test_monotone_in_removed_count(self):
        ids, records, binning = self.make()
        previous = set(ids)
        for removed in range(6):
            survivors = set(filter_samples(ids, records, binning, removed))
            assert survivors <= previous
            previous = survivors

    def test_any_landmark_in_removed_bin_discards_sample(self):
        ids = ["A", "B"]
        records = [record("A", [0.1, 0.1, 99.0]), record("B", [0.2, 0.2, 0.2])]
        pooled = np.concatenate([r.uncertainties for r in records])
        binning = quantile_edges(pooled, 3)
        assert filter_samples(ids, records, binning, 1) == ["B"]

    def test_missing_landmarks_removed_first(self):
        ids, records, binning = self.make()
        ids2 = ids + ["GHOST"]
        assert "GHOST" in filter_samples(ids2, records, binning, 0)
        assert "GHOST" not in filter_samples(ids2, records, binning, 1)

    def test_rejects_bad_count(self):
        ids, records, binning = self.make()
        with pytest.raises(DataError):
            filter_samples(ids, records, binning, 6)


class TestIterativeRemoval:
    def run_scripted(self, aucs_by_count, bin_count=10):
        """Drive the loop with a scripted validation callback."""
        ids = [f"S{i}" for i in range(bin_count * 2)]
        records = [record(sid, [float(i)] * 3) for i, sid in enumerate(ids)]
        pooled = np.concatenate([r.uncertainties for r in records])
        binning = quantile_edges(pooled, bin_count)
        calls = []

        def validate(survivors):
            count = len(calls)
            calls.append(len(survivors))
            return aucs_by_count[count]

        chosen, history = iterative_bin_removal(ids, records, binning, validate)
        return chosen, history, calls

    def test_stop_after_two_non_improving(self):
        chosen, history, calls = self.run_scripted([0.70, 0.72, 0.71, 0.71, 0.90])
        # the 0.90 entry is never evaluated: two non-improving steps end the loop
        assert len(calls) == 4
        assert chosen == 1  # count with the best AUC in history
        assert [auc for _, _, auc in history] == [0.70, 0.72, 0.71, 0.71]

    def test_monotone_decreasing_returns_zero_after_two_iterations(self):
        chosen, history, calls = self.run_scripted([0.9, 0.8, 0.7, 0.6])
        assert chosen == 0
        assert len(calls) == 3  # baseline + two non-improving iterations

    def test_ties_do_not_count_as_improvement(self):
        chosen, history, _ = self.run_scripted([0.8, 0.8, 0.8, 0.8])
        assert chosen == 0
        assert len(history) == 3

    def test_returned_count_indexes_history_maximum(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            aucs = list(rng.uniform(0.4, 0.9, size=11))
            chosen, history, _ = self.run_scripted(aucs)
            seen = [auc for _, _, auc in history]
            assert seen == aucs[: len(seen)]
            assert seen[chosen] == max(seen)
            assert chosen == int(np.argmax(seen))  # earliest on ties

    def test_callback_failure_aborts_with_partial_history(self):
        def validate_factory():
            calls = {"n": 0}

            def validate(survivors):
                if calls["n"] == 2:
                    raise RuntimeError("boom")
                calls["n"] += 1
                return 0.9 + 0.01 * calls["n"]

            return validate

        ids = [f"S{i}" for i in range(20)]
        records = [record(sid, [float(i)] * 3) for i, sid in enumerate(ids)]
        pooled = np.concatenate([r.uncertainties for r in records])
        binning = quantile_edges(pooled, 10)
        with pytest.raises(ValidationAbort) as err:
            iterative_bin_removal(ids, records, binning, validate_factory())
        assert len(err.value.history) == 2

    def test_history_recorded_on_binning_object(self):
        ids = [f"S{i}" for i in range(20)]
        records = [record(sid, [float(i)] * 3) for i, sid in enumerate(ids)]
        pooled = np.concatenate([r.uncertainties for r in records])
        binning = quantile_edges(pooled, 10)
        iterative_bin_removal(ids, records, binning, lambda s: 0.5)
        assert binning.history == [(0, 0.5), (1, 0.5), (2, 0.5)]


def test_binning_assign_tie_goes_to_lower_bin():
    binning = QuantileBinning(bin_count=3, edges=np.array([1.0, 2.0]))
    assert binning.assign([0.5, 1.0, 1.5, 2.0, 2.5]).tolist() == [1, 1, 2, 2, 3]
