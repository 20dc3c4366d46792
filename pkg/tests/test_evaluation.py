from datetime import date, timedelta

import numpy as np
import pytest

from pawpkit.errors import DataError, SingleClassError
from pawpkit.evaluation import (
    accuracy,
    confusion,
    dca_curve,
    mcc,
    partitioned_std,
    roc_auc,
    temporal_split,
)


def pairwise_auc(scores, labels):
    """O(n^2) oracle: count positive-negative pairs, ties worth half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels) > 0
    pos = scores[labels]
    neg = scores[~labels]
    wins = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    return (wins + 0.5 * ties) / (pos.size * neg.size)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_ties_give_half(self):
        assert roc_auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5

    def test_worked_example(self):
        # brute force over the 4 positive-negative pairs: 3 wins, no ties
        scores = [0.1, 0.4, 0.35, 0.8]
        labels = [0, 0, 1, 1]
        assert pairwise_auc(scores, labels) == pytest.approx(0.75)
        assert roc_auc(scores, labels) == pytest.approx(0.75)

    def test_equals_pairwise_oracle_exactly(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(4, 200))
            scores = rng.integers(0, 25, size=n) / 25.0  # heavy ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert roc_auc(scores, labels) == pairwise_auc(scores, labels)

    def test_negation_symmetry(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=50)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        assert abs(roc_auc(scores, labels) + roc_auc(-scores, labels) - 1.0) < 1e-12

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=80)
        labels = rng.integers(0, 2, size=80)
        labels[:2] = [0, 1]
        assert roc_auc(scores, labels) == pytest.approx(
            roc_auc(np.exp(scores) + 3, labels), abs=1e-12
        )

    def test_single_class_rejected(self):
        with pytest.raises(SingleClassError):
            roc_auc([0.1, 0.2], [1, 1])


class TestConfusion:
    def test_perfect_predictions(self):
        tp, fp, tn, fn = confusion([1, 0, 1, 0], [1, 0, 1, 0])
        assert (tp, fp, tn, fn) == (2, 0, 2, 0)
        assert fp == fn == 0

    def test_inverted_predictions(self):
        tp, fp, tn, fn = confusion([0, 1, 0, 1], [1, 0, 1, 0])
        assert tp == tn == 0

    def test_counting_example(self):
        labels = [1] * 7 + [0] * 3
        preds = [1] * 6 + [0] + [1] + [0] * 2
        assert confusion(preds, labels) == (6, 1, 2, 1)
        assert sum(confusion(preds, labels)) == 10

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion([1, 0], [1])


class TestMcc:
    def test_perfect(self):
        assert mcc(10, 0, 5, 0) == pytest.approx(1.0)

    def test_chance_level(self):
        assert mcc(25, 25, 25, 25) == 0.0

    def test_hand_computed_case(self):
        # 1950 / sqrt(7,425,000) = 0.7156 by direct formula evaluation
        assert mcc(40, 10, 50, 5) == pytest.approx(0.7156, abs=1e-4)

    def test_zero_factor_convention(self):
        assert mcc(0, 0, 5, 5) == 0.0
        assert mcc(3, 0, 0, 2) == 0.0

    def test_swap_symmetry(self):
        assert mcc(40, 10, 50, 5) == pytest.approx(mcc(50, 5, 40, 10))

    def test_negative_counts_rejected(self):
        with pytest.raises(DataError):
            mcc(-1, 0, 0, 1)

    def test_accuracy(self):
        assert accuracy(6, 1, 2, 1) == pytest.approx(0.8)


class TestDca:
    def test_worked_example(self):
        # N=100, p_t=0.5: model treats 40 with TP=30, FP=10 -> NB = 0.20
        probs = np.concatenate([
            np.full(30, 0.9),   # treated true positives
            np.full(10, 0.9),   # treated false positives
            np.full(10, 0.1),   # untreated positives
            np.full(50, 0.1),   # untreated negatives
        ])
        labels = np.concatenate([np.ones(30), np.zeros(10), np.ones(10), np.zeros(50)])
        curve = dca_curve(probs, labels, thresholds=np.array([0.5]))
        assert curve.nb_model[0] == pytest.approx(0.20)

    def test_treat_all_formula_exact(self):
        rng = np.random.default_rng(3)
        probs = rng.uniform(size=200)
        labels = rng.integers(0, 2, size=200)
        curve = dca_curve(probs, labels)
        prevalence = labels.mean()
        expected = prevalence - (1 - prevalence) * curve.thresholds / (1 - curve.thresholds)
        np.testing.assert_allclose(curve.nb_all, expected, atol=1e-12)

    def test_treat_all_value_at_point_two(self):
        labels = np.array([1] * 30 + [0] * 70)
        curve = dca_curve(np.full(100, 0.5), labels, thresholds=np.array([0.2]))
        assert curve.nb_all[0] == pytest.approx(0.3 - 0.7 * 0.25)

    def test_treat_none_is_zero(self):
        curve = dca_curve([0.2, 0.8], [0, 1])
        assert not curve.nb_none.any()

    def test_small_threshold_limits(self):
        labels = np.array([1] * 40 + [0] * 60)
        perfect = labels.astype(float)
        curve = dca_curve(perfect, labels, thresholds=np.array([0.001]))
        assert curve.nb_all[0] == pytest.approx(0.4, abs=1e-3)
        assert curve.nb_model[0] == pytest.approx(0.4, abs=1e-6)

    def test_model_below_perfect_model_everywhere(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 2, size=150)
        labels[:2] = [0, 1]
        probs = np.clip(0.5 * labels + rng.uniform(size=150) * 0.5, 0, 1)
        curve = dca_curve(probs, labels)
        prevalence = labels.mean()
        assert np.all(curve.nb_model <= prevalence + 1e-12)

    def test_all_treated_equals_treat_all(self):
        labels = np.array([1] * 20 + [0] * 30)
        curve = dca_curve(np.ones(50), labels)
        np.testing.assert_allclose(curve.nb_model, curve.nb_all, atol=1e-12)

    def test_threshold_bounds_rejected(self):
        with pytest.raises(DataError):
            dca_curve([0.5], [1], thresholds=np.array([1.0]))
        with pytest.raises(DataError):
            dca_curve([0.5], [1], thresholds=np.array([0.0]))
        with pytest.raises(DataError):
            dca_curve([1.5], [1])


class TestTemporalSplit:
    def make(self, n, start=date(2015, 1, 1)):
        ids = [f"S{i:04d}" for i in range(n)]
        stamps = [start + timedelta(days=i) for i in range(n)]
        return ids, stamps

    def test_exact_cohort_counts(self):
        ids, stamps = self.make(1346)
        train, test = temporal_split(stamps, ids, 1081 / 1346 + 1e-9)
        assert len(train) == 1081
        assert len(test) == 265

    def test_full_fraction_empty_test(self):
        ids, stamps = self.make(10)
        train, test = temporal_split(stamps, ids, 1.0)
        assert len(train) == 10 and len(test) == 0

    def test_ordering_invariant(self):
        rng = np.random.default_rng(5)
        ids, stamps = self.make(50)
        perm = rng.permutation(50)
        ids = [ids[i] for i in perm]
        stamps = [stamps[i] for i in perm]
        train, test = temporal_split(stamps, ids, 0.6)
        max_train = max(stamps[i] for i in train)
        min_test = min(stamps[i] for i in test)
        assert max_train <= min_test

    def test_stable_tiebreak_by_subject(self):
        ids = ["B", "A", "C"]
        stamps = [date(2020, 1, 1)] * 3
        train, test = temporal_split(stamps, ids, 2 / 3)
        assert [ids[i] for i in train] == ["A", "B"]

    def test_missing_timestamp_listed(self):
        with pytest.raises(DataError, match="S1"):
            temporal_split([date(2020, 1, 1), None], ["S0", "S1"], 0.5)


class TestPartitionedStd:
    def test_identical_parts_zero_std(self):
        ids = [f"S{i}" for i in range(20)]
        stamps = [date(2020, 1, 1) + timedelta(days=i) for i in range(20)]
        mean, std, parts = partitioned_std(stamps, ids, lambda idx: 0.7, parts=5)
        assert mean == 0.7 and std == 0.0 and len(parts) == 5

    def test_265_into_5_parts_of_53(self):
        ids = [f"S{i:04d}" for i in range(265)]
        stamps = [date(2019, 1, 1) + timedelta(days=i) for i in range(265)]
        sizes = []
        partitioned_std(stamps, ids, lambda idx: sizes.append(len(idx)) or 0.0, parts=5)
        assert sizes == [53] * 5

    def test_two_point_statistics(self):
        ids = ["A", "B", "C", "D"]
        stamps = [date(2020, 1, 1) + timedelta(days=i) for i in range(4)]
        values = iter([0.8, 0.9])
        mean, std, parts = partitioned_std(stamps, ids, lambda idx: next(values), parts=2)
        assert mean == pytest.approx(0.85)
        assert std == pytest.approx(0.05)  # population std

    def test_undefined_chunk_skipped(self):
        ids = [f"S{i}" for i in range(9)]
        stamps = [date(2020, 1, 1) + timedelta(days=i) for i in range(9)]
        calls = {"n": 0}

        def metric(idx):
            calls["n"] += 1
            if calls["n"] == 2:
                raise SingleClassError("one class only")
            return 0.5

        mean, std, parts = partitioned_std(stamps, ids, metric, parts=3)
        assert len(parts) == 2 and mean == 0.5

    def test_too_few_rows_rejected(self):
        with pytest.raises(DataError):
            partitioned_std([date(2020, 1, 1)], ["S0"], lambda i: 0.0, parts=5)
