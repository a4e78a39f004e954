"""Estimation error, AUPR and PR-curve behavior against brute-force oracles."""

import numpy as np
import pytest

from accmon.metrics import aupr, estimation_error, pr_curve, write_pr_csv


def brute_force_aupr(scores, positives):
    """Step-curve integration over every distinct threshold, computed the
    slow way: include all records scoring >= t, one t per unique score."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    total = positives.sum()
    points = []
    for t in sorted(set(scores), reverse=True):
        included = scores >= t
        tp = float((positives & included).sum())
        points.append((tp / total, tp / included.sum()))
    area = 0.0
    prev_recall = 0.0
    for recall, precision in points:
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


class TestEstimationError:
    def test_small_gap(self):
        assert estimation_error(0.63, 0.6304) == pytest.approx(0.0004)

    def test_maximal_gap(self):
        assert estimation_error(1.0, 0.0) == 1.0

    def test_symmetry(self):
        assert estimation_error(0.2, 0.5) == estimation_error(0.5, 0.2)


class TestAupr:
    def test_perfect_ranking(self):
        assert aupr([0.9, 0.8, 0.3], [1, 1, 0]) == 1.0

    def test_constant_scores_give_positive_ratio(self):
        correct = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0]
        assert aupr(np.full(10, 0.4), correct) == pytest.approx(0.7, abs=0)

    def test_two_point_case(self):
        # Wrong record outranks the only positive: the single positive is
        # found at depth 2, precision 1/2.
        assert aupr([0.9, 0.1], [0, 1]) == pytest.approx(0.5, abs=0)

    def test_matches_brute_force_small_cases(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            n = int(rng.integers(2, 13))
            scores = rng.choice([0.1, 0.25, 0.5, 0.75, 0.9], size=n)
            correct = rng.integers(0, 2, size=n)
            if correct.sum() == 0:
                correct[0] = 1
            fast = aupr(scores, correct)
            slow = brute_force_aupr(scores, correct.astype(bool))
            assert fast == pytest.approx(slow, abs=1e-9)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(22)
        scores = rng.random(60)
        correct = rng.integers(0, 2, size=60)
        correct[0] = 1
        base = aupr(scores, correct)
        assert aupr(np.exp(3.0 * scores), correct) == pytest.approx(base, abs=1e-12)
        assert aupr(2.0 * scores - 5.0, correct) == pytest.approx(base, abs=1e-12)

    def test_positive_wrong_flips_the_positive_class(self):
        scores = np.array([0.1, 0.2, 0.9])
        correct = np.array([0, 0, 1])
        assert aupr(-scores, correct, positive="wrong") == 1.0

    def test_order_invariance_with_ties(self):
        rng = np.random.default_rng(23)
        scores = rng.choice([0.3, 0.6], size=30)
        correct = rng.integers(0, 2, size=30)
        correct[0] = 1
        base = aupr(scores, correct)
        for _ in range(5):
            perm = rng.permutation(30)
            assert aupr(scores[perm], correct[perm]) == pytest.approx(base, abs=0)

    def test_no_positives_is_an_error(self):
        with pytest.raises(ValueError, match="positive"):
            aupr([0.5, 0.6], [0, 0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths"):
            aupr([0.5, 0.6], [1])


class TestPrCurve:
    def test_perfect_ranking_pins_precision(self):
        curve = pr_curve([0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0])
        until_full = [p for r, p in curve.points if r < 1.0] + [curve.points[2][1]]
        assert all(p == 1.0 for p in until_full)
        assert curve.recalls[-1] == 1.0

    def test_constant_scores_single_point(self):
        curve = pr_curve(np.full(10, 0.5), [1] * 7 + [0] * 3)
        assert curve.points == [(1.0, 0.7)]
        assert curve.positive_ratio == pytest.approx(0.7)

    def test_recalls_non_decreasing(self):
        rng = np.random.default_rng(24)
        scores = rng.random(50)
        correct = rng.integers(0, 2, size=50)
        correct[0] = 1
        curve = pr_curve(scores, correct)
        assert all(b >= a for a, b in zip(curve.recalls, curve.recalls[1:]))

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(25)
        scores = rng.choice([0.2, 0.4, 0.6, 0.8], size=8)
        correct = rng.integers(0, 2, size=8)
        correct[0] = 1
        curve = pr_curve(scores, correct)
        total = correct.sum()
        expected = []
        for t in sorted(set(scores), reverse=True):
            included = scores >= t
            tp = float((correct.astype(bool) & included).sum())
            expected.append((tp / total, tp / included.sum()))
        assert curve.points == pytest.approx(expected)

    def test_csv_export(self, tmp_path):
        curve = pr_curve([0.9, 0.1], [1, 0])
        path = tmp_path / "curve.csv"
        write_pr_csv(curve, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "recall,precision"
        assert len(lines) == 1 + len(curve.points)
