import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailkit.data import LabelMatrix, ScoreMatrix
from tailkit.metrics import EceConfig, auc_roc, average_precision, ece, f1_at_threshold, macro_report


def ap_threshold_oracle(scores, labels):
    """Exhaustive precision/recall at every distinct threshold, high to low."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        return None
    total = 0.0
    prev_recall = 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        predicted = scores >= t
        tp = int((predicted & (labels == 1)).sum())
        precision = tp / int(predicted.sum())
        recall = tp / n_pos
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total


def auc_pairwise_oracle(scores, labels):
    """O(n^2) count over (positive, negative) pairs with 0.5 tie credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (pos.size * neg.size)


class TestAveragePrecision:
    def test_hand_example(self):
        ap = average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-15)

    def test_perfect_ranking(self):
        assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_single_positive_sample(self):
        assert average_precision([0.3], [1]) == 1.0

    def test_no_positives_undefined(self):
        assert average_precision([0.3, 0.8], [0, 0]) is None

    def test_ties_broken_by_original_order(self):
        # tied scores: the positive at the earlier index is ranked first
        assert average_precision([0.5, 0.5], [1, 0]) == 1.0
        assert average_precision([0.5, 0.5], [0, 1]) == 0.5

    def test_matches_threshold_oracle_without_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 13))
            scores = rng.random(n)
            labels = rng.integers(0, 2, n)
            expected = ap_threshold_oracle(scores, labels)
            got = average_precision(scores, labels)
            if expected is None:
                assert got is None
            else:
                assert got == pytest.approx(expected, abs=1e-12)


class TestAucRoc:
    def test_perfect(self):
        assert auc_roc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties(self):
        assert auc_roc([0.4, 0.4, 0.4], [1, 0, 1]) == 0.5

    def test_undefined_single_class(self):
        assert auc_roc([0.1, 0.9], [1, 1]) is None
        assert auc_roc([0.1, 0.9], [0, 0]) is None

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 51))
            scores = rng.random(n)
            if rng.random() < 0.5:
                scores = np.round(scores, 1)  # force ties
            labels = rng.integers(0, 2, n)
            expected = auc_pairwise_oracle(scores, labels)
            got = auc_roc(scores, labels)
            if expected is None:
                assert got is None
            else:
                assert got == pytest.approx(expected, abs=1e-12)

    def test_label_flip_symmetry(self):
        rng = np.random.default_rng(2)
        scores = rng.random(40)
        labels = rng.integers(0, 2, 40)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        a = auc_roc(scores, labels)
        b = auc_roc(-scores, 1 - labels)
        assert a == pytest.approx(b, abs=1e-12)


class TestF1:
    def test_perfect(self):
        assert f1_at_threshold([0.9, 0.1], [1, 0], 0.5) == 1.0

    def test_no_predictions_zero(self):
        assert f1_at_threshold([0.1, 0.2], [1, 1], 0.5) == 0.0

    def test_empty_denominator_zero(self):
        assert f1_at_threshold([0.1, 0.2], [0, 0], 0.5) == 0.0

    def test_hand_counts(self):
        # TP=1 FP=1 FN=1 -> 2/4
        assert f1_at_threshold([0.9, 0.8, 0.1], [1, 0, 1], 0.5) == 0.5

    def test_threshold_inclusive(self):
        assert f1_at_threshold([0.5], [1], 0.5) == 1.0


class TestEce:
    def test_perfect_calibration(self):
        assert ece([0.0, 1.0, 1.0, 0.0], [0, 1, 1, 0], EceConfig(15)) == 0.0

    def test_matched_half_bin(self):
        assert ece([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0], EceConfig(10)) == 0.0

    def test_fully_miscalibrated(self):
        assert ece([0.9] * 5, [0] * 5, EceConfig(15)) == pytest.approx(0.9, abs=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ece([1.2], [1], EceConfig(10))

    def test_bin_edges_right_closed(self):
        # with 2 bins, 0.5 lands in the first bin (0 is left-closed)
        cfg = EceConfig(2)
        assert ece([0.5], [0], cfg) == pytest.approx(0.5, abs=1e-12)
        assert ece([0.0], [0], cfg) == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=50),
        st.integers(min_value=1, max_value=30),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_bounded(self, scores, n_bins, seed):
        labels = np.random.default_rng(seed).integers(0, 2, len(scores))
        value = ece(scores, labels, EceConfig(n_bins))
        assert 0.0 <= value <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=1, max_value=15),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_bin_refinement_bound(self, n_bins, seed):
        # halving bin widths never lowers ECE by more than the binning error
        rng = np.random.default_rng(seed)
        scores = rng.random(60)
        labels = rng.integers(0, 2, 60)
        coarse = ece(scores, labels, EceConfig(n_bins))
        fine = ece(scores, labels, EceConfig(2 * n_bins))
        assert fine >= coarse - 1.0 / n_bins


class TestRankInvariance:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_strictly_increasing_transforms(self, seed):
        rng = np.random.default_rng(seed)
        n = 30
        scores = rng.standard_normal(n)
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        base_ap = average_precision(scores, labels)
        base_auc = auc_roc(scores, labels)
        for transformed in (1.0 / (1.0 + np.exp(-scores)), 3.0 * scores + 11.0):
            assert average_precision(transformed, labels) == pytest.approx(base_ap, abs=1e-12)
            assert auc_roc(transformed, labels) == pytest.approx(base_auc, abs=1e-12)


class TestMacroReport:
    def _fixture(self):
        labels = LabelMatrix(
            ids=["a", "b", "c", "d"],
            values=[[1, 0, 0], [0, 0, 0], [1, 0, 1], [0, 0, 1]],
            class_names=["k0", "k1", "k2"],
        )
        scores = ScoreMatrix(
            ids=["a", "b", "c", "d"],
            values=[[0.9, 0.1, 0.2], [0.8, 0.2, 0.3], [0.7, 0.3, 0.9], [0.1, 0.4, 0.8]],
            kind="probabilities",
            class_names=["k0", "k1", "k2"],
        )
        return scores, labels

    def test_skips_empty_class(self):
        scores, labels = self._fixture()
        report = macro_report(scores, labels)
        assert report.per_class["k1"]["ap"] is None
        skipped = {(s["class"], s["metric"]) for s in report.skipped_classes}
        assert ("k1", "ap") in skipped and ("k1", "auc") in skipped

    def test_macro_is_mean_of_defined(self):
        scores, labels = self._fixture()
        report = macro_report(scores, labels)
        defined = [report.per_class[k]["ap"] for k in ("k0", "k2")]
        assert report.macro["map"] == pytest.approx(np.mean(defined), abs=1e-15)

    def test_two_class_mean(self):
        labels = LabelMatrix(["a", "b"], [[1, 1], [0, 0]], ["x", "y"])
        scores = ScoreMatrix(
            ["a", "b"], [[0.9, 0.2], [0.1, 0.8]], "probabilities", ["x", "y"]
        )
        report = macro_report(scores, labels)
        assert report.per_class["x"]["ap"] == 1.0
        assert report.per_class["y"]["ap"] == 0.5
        assert report.macro["map"] == pytest.approx(0.75)

    def test_misalignment_rejected(self):
        scores, labels = self._fixture()
        other = ScoreMatrix(
            ids=["a", "b", "c", "e"],
            values=scores.values,
            kind="probabilities",
            class_names=scores.class_names,
        )
        with pytest.raises(ValueError, match="misalignment"):
            macro_report(other, labels)

    def test_requires_probabilities(self):
        scores, labels = self._fixture()
        logits = ScoreMatrix(scores.ids, scores.values, "logits", scores.class_names)
        with pytest.raises(ValueError, match="probabilit"):
            macro_report(logits, labels)
