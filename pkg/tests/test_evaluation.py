import numpy as np
import pytest

from data_utils import ScoredPair
from embeddings import EmbeddingTable
from evaluation import (UndefinedCorrelationError, spearman, select_threshold, binary_counts, binary_metrics,
                        resolve_threshold, EvalReport, evaluate_scores, evaluate, aggregate)
from models import ModelBundle, init_params


def _average_ranks(values):
    return np.array([sum(v < x for v in values) + (sum(v == x for v in values) + 1) / 2.0 for x in values])


class TestSpearman:

    def test_matches_rank_pearson(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(3, 30))
            pred = rng.integers(0, 6, size=n).astype(float)
            gold = rng.integers(0, 6, size=n).astype(float)
            if len(set(pred)) == 1 or len(set(gold)) == 1:
                continue
            expected = np.corrcoef(_average_ranks(pred), _average_ranks(gold))[0, 1]
            assert abs(spearman(pred, gold) - expected) < 1e-12

    def test_perfect_and_reversed(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(1)
        pred, gold = rng.normal(size=50), rng.normal(size=50)
        assert spearman(np.exp(pred), gold) == pytest.approx(spearman(pred, gold), abs=1e-12)

    def test_constant_input(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            spearman([1.0, 2.0], [1.0, 2.0, 3.0])


class TestThreshold:

    def test_separable_scores(self):
        assert select_threshold([1.0, 2.0, 3.0, 4.0], [False, False, True, True]) == 2.5

    def test_single_distinct_score(self):
        assert select_threshold([3.0, 3.0], [True, False]) == 3.0

    def test_no_positive_gives_lowest_candidate(self):
        assert select_threshold([4.0, 1.0, 2.0], [False, False, False]) == 1.0

    def test_ties_pick_lowest_threshold(self):
        # thresholds 1.0 and 3.5 both give f1 = 2/3
        assert select_threshold([1.0, 2.0, 3.0, 4.0], [True, False, False, True]) == 1.0

    def test_selection_maximises_f1(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            scores = rng.uniform(0, 10, size=20).round(1)
            gold = rng.random(20) < 0.4
            if not gold.any():
                continue
            best = select_threshold(scores, gold)
            candidates = np.unique(scores)
            assert binary_metrics(scores, gold, best)[2] >= max(binary_metrics(scores, gold, t)[2]
                                                                for t in candidates) - 1e-12

    def test_resolve(self):
        assert resolve_threshold("half", 10.0) == 5.0
        assert resolve_threshold("dev_f1", 10.0, [1.0, 9.0], [False, True]) == 5.0
        with pytest.raises(ValueError):
            resolve_threshold("dev_f1", 10.0, [], [])
        with pytest.raises(ValueError):
            resolve_threshold("other", 10.0)


class TestBinaryMetrics:

    def test_counts(self):
        assert binary_counts([1.0, 6.0, 7.0, 2.0], [False, True, False, True], 5.0) == (1, 1, 1)

    def test_f1_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            scores, gold = rng.uniform(0, 10, size=15), rng.random(15) < 0.5
            p, r, f1 = binary_metrics(scores, gold, rng.uniform(0, 10))
            if p + r > 0:
                assert abs(f1 - 2 * p * r / (p + r)) < 1e-12
            else:
                assert f1 == 0.0

    def test_no_positive_prediction(self):
        assert binary_metrics([1.0, 2.0], [True, False], 5.0) == (0.0, 0.0, 0.0)


class TestReports:

    def test_graded_report(self):
        report = evaluate_scores([1.0, 2.0, 3.0], [0.5, 1.5, 9.0], "graded", n_skipped=2, seed=4)
        assert report.rho == pytest.approx(1.0) and report.metric() == report.rho
        assert report.to_dict()["n_skipped"] == 2
        assert "per_seed" not in report.to_dict()
        assert "rho: 1.0000" in report.summary()

    def test_binary_needs_threshold(self):
        with pytest.raises(ValueError, match="threshold"):
            evaluate_scores([1.0], [True], "binary")

    def test_nothing_scored(self):
        with pytest.raises(ValueError, match="out-of-vocabulary"):
            evaluate_scores([], [], "graded")

    def test_range_checks(self):
        with pytest.raises(ValueError):
            EvalReport(task="graded", rho=1.5)
        with pytest.raises(ValueError):
            EvalReport(task="binary", f1=-0.1)

    def test_evaluate_counts_skipped(self):
        rng = np.random.default_rng(5)
        table = EmbeddingTable(["a", "b", "c"], rng.normal(size=(3, 4)))
        bundle = ModelBundle(init_params(4, 3, 2, False, 10.0, 1), table)
        pairs = [ScoredPair("a", "b", True), ScoredPair("b", "a", False), ScoredPair("a", "zzz", True)]
        report = evaluate(bundle, pairs, "binary", threshold=5.0)
        assert report.n_scored == 2 and report.n_skipped == 1


class TestAggregate:

    def test_mean_and_std(self):
        result = aggregate([EvalReport(task="graded", rho=0.6, seed=1), EvalReport(task="graded", rho=0.7, seed=2)])
        assert result.mean["rho"] == pytest.approx(0.65)
        assert result.std["rho"] == pytest.approx(0.05)
        assert result.rho is None
        assert [r["seed"] for r in result.to_dict()["per_seed"]] == [1, 2]
        assert "seeds: 2" in result.summary()

    def test_single_seed(self):
        result = aggregate([EvalReport(task="binary", precision=0.5, recall=1.0, f1=2 / 3, threshold=4.0)])
        assert result.std["f1"] == 0.0
        assert result.mean["threshold"] == 4.0

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])
