"""Metric oracles (brute-force set enumeration) and the sample filter."""

import numpy as np
import pytest

from cbmlab import metrics
from cbmlab.data import ConceptSpec


def brute_introduced(orig, pert, universe):
    new = sum(1 for j in universe if j in pert and j not in orig)
    return 100.0 * new / len(orig)


def brute_retained(orig, pert, universe):
    kept = sum(1 for j in universe if j in orig and j in pert)
    return 100.0 * kept / len(orig)


def brute_jaccard(orig, pert, universe):
    inter = sum(1 for j in universe if j in orig and j in pert)
    union = sum(1 for j in universe if j in orig or j in pert)
    return 1.0 if union == 0 else inter / union


class TestSetMetrics:
    def test_against_brute_force_enumeration(self):
        rng = np.random.default_rng(42)
        universe = range(12)
        for _ in range(400):
            orig = frozenset(int(j) for j in universe if rng.random() < 0.4)
            pert = frozenset(int(j) for j in universe if rng.random() < 0.4)
            assert metrics.jaccard(orig, pert) == brute_jaccard(orig, pert, universe)
            if orig:
                assert metrics.pct_introduced(orig, pert) == brute_introduced(
                    orig, pert, universe)
                assert metrics.pct_retained(orig, pert) == brute_retained(
                    orig, pert, universe)

    def test_single_concept_example(self):
        # one original concept, two introduced alongside it
        assert metrics.pct_introduced({0}, {0, 1, 2}) == 200.0
        assert metrics.pct_retained({0}, {0, 1, 2}) == 100.0

    def test_jaccard_identical_empty_sets(self):
        assert metrics.jaccard(frozenset(), frozenset()) == 1.0

    def test_empty_original_set_rejected(self):
        with pytest.raises(ValueError):
            metrics.pct_introduced(set(), {1})
        with pytest.raises(ValueError):
            metrics.pct_retained(set(), {1})

    def test_introduced_can_exceed_100(self):
        assert metrics.pct_introduced({5}, {1, 2, 3}) == 300.0


class TestFlipMetrics:
    def test_binary_flip_count(self):
        orig = [0.9, 0.1, 0.6, 0.4]
        pert = [0.4, 0.1, 0.7, 0.6]  # indices 0 and 3 cross 0.5
        assert metrics.pct_flipped(orig, pert) == 50.0

    def test_binary_matches_hand_count_randomised(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            n = int(rng.integers(1, 20))
            a = rng.random(n)
            b = rng.random(n)
            hand = sum(1 for i in range(n) if (a[i] >= 0.5) != (b[i] >= 0.5))
            assert metrics.pct_flipped(a, b) == 100.0 * hand / n

    def test_continuous_needs_threshold(self):
        with pytest.raises(ValueError):
            metrics.pct_flipped([1.0], [5.0], kind="continuous")

    def test_continuous_threshold_is_strict(self):
        # |delta| must exceed the threshold, equality is not a flip
        got = metrics.pct_flipped([0.0, 0.0], [2.0, 2.5],
                                  kind="continuous", flip_threshold=2.0)
        assert got == 50.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            metrics.pct_flipped([1.0], [1.0, 2.0])


class TestPresenceAndDeltas:
    def test_presence_set_threshold_inclusive(self):
        assert metrics.presence_set([0.5, 0.49, 0.51]) == {0, 2}

    def test_delta_stats(self):
        mean, lo = metrics.delta_stats([1.0, 2.0], [2.0, 5.0])
        assert mean == 2.0 and lo == 1.0

    def test_aggregate_population_std(self):
        mean, std = metrics.aggregate([1.0, 3.0])
        assert mean == 2.0 and std == 1.0


class _StubModel:
    """Fixed-output model for exercising the filter branches."""

    class _Arch:
        task_kind = "classification"

    def __init__(self, scores, pred_class, kind="binary"):
        self._scores = np.asarray(scores, dtype=np.float64)
        self._pred = pred_class
        self.arch = self._Arch()
        names = tuple(f"c{i}" for i in range(len(self._scores)))
        self.spec = ConceptSpec(names=names, kind=kind,
                                relevance_threshold=0.5 if kind == "binary" else 0.0)

    def forward(self, xt):
        from cbmlab import autodiff as ad
        logits = np.zeros((1, 10))
        logits[0, self._pred] = 1.0
        return ad.Tensor(self._scores[None]), ad.Tensor(logits)


class _Sample:
    def __init__(self, label, concepts):
        self.image = np.zeros((4, 4))
        self.label = label
        self.concepts = np.asarray(concepts, dtype=np.float64)


class TestSampleFilter:
    def test_wrong_prediction_skipped(self):
        model = _StubModel([0.9] * 4, pred_class=3)
        res = metrics.sample_filter(model, _Sample(label=2, concepts=[1, 1, 1, 1]))
        assert not res.keep and res.reason == "wrong-prediction"

    def test_low_concept_accuracy_skipped(self):
        # 2 of 4 correct = 50% <= 60% cutoff
        model = _StubModel([0.9, 0.9, 0.1, 0.1], pred_class=2)
        res = metrics.sample_filter(model, _Sample(2, [1, 0, 1, 0]))
        assert not res.keep and res.reason == "low-concept-accuracy"

    def test_accuracy_exactly_60_is_skipped(self):
        # 3 of 5 correct: the paper keeps only samples strictly above 60%
        model = _StubModel([0.9, 0.9, 0.9, 0.1, 0.1], pred_class=0)
        res = metrics.sample_filter(model, _Sample(0, [1, 1, 1, 1, 1]))
        assert not res.keep

    def test_good_sample_kept(self):
        model = _StubModel([0.9, 0.9, 0.1, 0.1], pred_class=1)
        res = metrics.sample_filter(model, _Sample(1, [1, 1, 0, 0]))
        assert res.keep and res.reason == ""

    def test_continuous_rmse_cutoff(self):
        model = _StubModel([1.0, 1.0], pred_class=0, kind="continuous")
        bad = metrics.sample_filter(model, _Sample(0, [2.0, 2.0]))  # rmse 1.0
        good = metrics.sample_filter(model, _Sample(0, [1.1, 1.1]))
        assert not bad.keep and bad.reason == "high-concept-rmse"
        assert good.keep
