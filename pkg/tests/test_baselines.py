"""Baseline estimators: thresholds, MP*, entropy, temperature scaling, RS."""

import math

import numpy as np
import pytest

from accmon import baselines as bl
from accmon.records import NULL_LABEL, DataError, Dataset
from accmon.synth import ScenarioSpec, calibrated_spec, generate


def make_dataset(probs, labels=None, ids=None):
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    labels = [-2] * n if labels is None else labels
    ids = ids or [f"r{i}" for i in range(n)]
    return Dataset(ids, probs, np.asarray(labels, dtype=np.int64))


def labeled_from_scores(mp_values, correct):
    """Two-class dataset whose max prob is mp and label matches `correct`."""
    probs = [[v, 1.0 - v] for v in mp_values]
    labels = [0 if c else 1 for c in correct]
    return make_dataset(probs, labels)


class TestMpScore:
    def test_direct_max(self):
        ds = make_dataset([[0.1, 0.7, 0.2]])
        assert bl.mp_scores(ds)[0] == pytest.approx(0.7)
        assert bl.mp_score(ds[0]) == pytest.approx(0.7)

    def test_uniform(self):
        ds = make_dataset([np.full(10, 0.1)])
        assert bl.mp_scores(ds)[0] == pytest.approx(0.1)

    def test_one_hot(self):
        ds = make_dataset([[1.0, 0.0, 0.0]])
        assert bl.mp_scores(ds)[0] == 1.0


class TestEstimateMp:
    def test_direct_count(self):
        # Max probabilities 0.9 and 0.3 (a value below 0.5 needs C > 3).
        ds = make_dataset([[0.9, 0.05, 0.05, 0.0], [0.3, 0.3, 0.2, 0.2]])
        np.testing.assert_allclose(bl.mp_scores(ds), [0.9, 0.3])
        assert bl.estimate_mp(ds, 0.5) == pytest.approx(0.5)

    def test_threshold_zero_counts_everything(self):
        ds = labeled_from_scores([0.6, 0.7, 0.8], [True] * 3)
        assert bl.estimate_mp(ds, 0.0) == 1.0

    def test_threshold_above_max_counts_nothing(self):
        ds = labeled_from_scores([0.6, 0.7, 0.8], [True] * 3)
        assert bl.estimate_mp(ds, 0.81) == 0.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        ds = make_dataset(rng.dirichlet(np.ones(5), size=100))
        ests = [bl.estimate_mp(ds, t) for t in np.linspace(0, 1, 25)]
        assert all(b <= a for a, b in zip(ests, ests[1:]))


class TestEntropy:
    def test_uniform_is_maximal(self):
        ds = make_dataset([np.full(10, 0.1)])
        assert bl.multiclass_entropies(ds)[0] == pytest.approx(math.log(10), rel=1e-12)

    def test_one_hot_is_zero(self):
        ds = make_dataset([[1.0, 0.0, 0.0]])
        assert bl.multiclass_entropies(ds)[0] == 0.0
        assert bl.multiclass_entropy(ds[0]) == 0.0

    def test_two_mass_points(self):
        ds = make_dataset([[0.5, 0.5, 0.0, 0.0]])
        assert bl.multiclass_entropies(ds)[0] == pytest.approx(math.log(2), rel=1e-12)

    def test_estimate_entropy_boundaries(self):
        rng = np.random.default_rng(2)
        ds = make_dataset(rng.dirichlet(np.ones(4), size=50))
        assert bl.estimate_entropy(ds, 0.0) == 0.0
        assert bl.estimate_entropy(ds, math.log(4) + 1e-9) == 1.0

    def test_estimate_entropy_matches_brute_count(self):
        rng = np.random.default_rng(3)
        ds = make_dataset(rng.dirichlet(np.ones(4), size=200))
        ent = bl.multiclass_entropies(ds)
        for th in (0.3, 0.8, 1.2):
            expected = float(np.mean(ent < th))
            assert bl.estimate_entropy(ds, th) == pytest.approx(expected, abs=0)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        ds = make_dataset(rng.dirichlet(np.ones(5), size=100))
        ests = [bl.estimate_entropy(ds, t) for t in np.linspace(0, math.log(5), 25)]
        assert all(b >= a for a, b in zip(ests, ests[1:]))


class TestCalibrateThreshold:
    def test_separable_reference_has_zero_error(self):
        ds = labeled_from_scores(
            [0.95, 0.9, 0.85, 0.3, 0.25], [True, True, True, False, False]
        )
        cal = bl.calibrate_threshold(ds, "mp")
        assert cal.calibration_error == pytest.approx(0.0, abs=1e-12)

    def test_all_correct_threshold_at_or_below_minimum(self):
        ds = labeled_from_scores([0.9, 0.8, 0.7], [True, True, True])
        cal = bl.calibrate_threshold(ds, "mp")
        assert cal.threshold <= 0.7
        assert cal.calibration_error == pytest.approx(0.0, abs=1e-12)
        assert bl.estimate_mp(ds, cal.threshold) == 1.0

    def test_matches_uniform_grid_oracle(self):
        rng = np.random.default_rng(5)
        spec = ScenarioSpec(n=500, class_count=6, target_acc=0.7, seed=3)
        ds = generate(spec)
        for kind, grid_hi, estimate in (
            ("mp", 1.0, bl.estimate_mp),
            ("entropy", math.log(6), bl.estimate_entropy),
        ):
            cal = bl.calibrate_threshold(ds, kind)
            from accmon.records import true_accuracy

            truth = true_accuracy(ds)
            grid = np.linspace(0.0, grid_hi, 10_001)
            grid_best = min(abs(estimate(ds, float(t)) - truth) for t in grid)
            # The scan enumerates every achievable estimate, so it can never
            # lose to the grid; the grid can miss by at most one step's mass.
            assert cal.calibration_error <= grid_best + 1e-12
            assert grid_best - cal.calibration_error <= 0.01

    def test_tie_breaks_to_smaller_threshold(self):
        ds = labeled_from_scores([0.9, 0.6], [True, False])
        cal = bl.calibrate_threshold(ds, "mp")
        # Any threshold in (0.6, 0.9] scores 0.5 exactly; the scan must pick
        # the smallest candidate achieving it (the midpoint 0.75).
        assert cal.calibration_error == pytest.approx(0.0, abs=1e-12)
        assert cal.threshold == pytest.approx(0.75)

    def test_empty_reference_rejected(self):
        with pytest.raises((DataError, ValueError)):
            bl.calibrate_threshold(make_dataset(np.empty((0, 2))), "mp")


class TestMpStar:
    def test_mean(self):
        ds = labeled_from_scores([0.6, 0.9], [True, True])
        assert bl.estimate_mp_star(ds) == pytest.approx(0.75)

    def test_one_hot_gives_one(self):
        ds = make_dataset(np.eye(4)[[0, 1, 2]])
        assert bl.estimate_mp_star(ds) == 1.0

    def test_calibrated_regime_tracks_accuracy(self):
        spec = calibrated_spec(n=20_000, class_count=10, target_acc=0.75, seed=9)
        ds = generate(spec)
        from accmon.records import true_accuracy

        assert abs(bl.estimate_mp_star(ds) - true_accuracy(ds)) <= 0.02

    def test_overconfident_regime_overestimates(self):
        spec = calibrated_spec(n=20_000, class_count=10, target_acc=0.75, seed=9)
        from dataclasses import replace

        sharp = replace(spec, temperature_distortion=3.0, target_acc=0.4, seed=10)
        ds = generate(sharp)
        from accmon.records import true_accuracy

        assert bl.estimate_mp_star(ds) > true_accuracy(ds) + 0.1


class TestTemperatureScaling:
    def test_t1_identity_with_mp_star(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            c = int(rng.integers(2, 8))
            ds = make_dataset(rng.dirichlet(np.ones(c), size=30))
            assert bl.estimate_ts(ds, 1.0) == bl.estimate_mp_star(ds)

    def test_large_t_flattens_to_uniform(self):
        rng = np.random.default_rng(7)
        ds = make_dataset(rng.dirichlet(np.ones(10), size=200))
        assert abs(bl.estimate_ts(ds, 20.0) - 0.1) <= 0.02

    def test_rejects_nonpositive_temperature(self):
        ds = make_dataset([[0.5, 0.5]])
        with pytest.raises(ValueError):
            bl.estimate_ts(ds, 0.0)

    @staticmethod
    def categorical_dataset(n, temperature, seed, c=10):
        """Probs from softmax(z); labels sampled from softmax(z / T*)."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, c)) * 1.5
        probs = np.exp(z - z.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        zt = z / temperature
        q = np.exp(zt - zt.max(axis=1, keepdims=True))
        q /= q.sum(axis=1, keepdims=True)
        labels = np.array([rng.choice(c, p=row) for row in q])
        return make_dataset(probs, labels)

    def test_recovers_unit_temperature(self):
        ds = self.categorical_dataset(20_000, 1.0, seed=8)
        fit = bl.fit_temperature(ds)
        assert fit.temperature == pytest.approx(1.0, abs=0.05)

    def test_recovers_planted_temperature(self):
        ds = self.categorical_dataset(20_000, 2.5, seed=9)
        fit = bl.fit_temperature(ds)
        assert fit.temperature == pytest.approx(2.5, abs=0.1)
        # Coarse grid oracle agrees that nothing beats the fit.
        z = np.log(ds.probs + 1e-12)
        for t in np.linspace(0.5, 6.0, 23):
            assert fit.nll <= bl._nll_at(z, ds.labels, float(t)) + 1e-9

    def test_fit_never_loses_to_anchors(self):
        rng = np.random.default_rng(10)
        ds = make_dataset(
            rng.dirichlet(np.ones(5), size=300), rng.integers(0, 5, size=300)
        )
        fit = bl.fit_temperature(ds)
        z = np.log(ds.probs + 1e-12)
        for t in (bl.TEMPERATURE_BOUNDS[0], bl.TEMPERATURE_BOUNDS[1], 1.0):
            assert fit.nll <= bl._nll_at(z, ds.labels, t) + 1e-12

    def test_single_confident_sample_hits_lower_bound(self):
        # NLL is monotone decreasing in sharpening here, so the fit runs
        # into the search interval's lower end.
        ds = make_dataset([[0.7, 0.2, 0.1]], labels=[0])
        fit = bl.fit_temperature(ds)
        assert fit.temperature == pytest.approx(bl.TEMPERATURE_BOUNDS[0], rel=1e-4)

    def test_null_labels_excluded_with_warning(self):
        ds = make_dataset(
            [[0.7, 0.3], [0.6, 0.4]], labels=[0, NULL_LABEL]
        )
        with pytest.warns(UserWarning, match="null"):
            fit = bl.fit_temperature(ds)
        assert fit.temperature > 0

    def test_all_null_rejected(self):
        ds = make_dataset([[0.7, 0.3]], labels=[NULL_LABEL])
        with pytest.warns(UserWarning):
            with pytest.raises(DataError):
                bl.fit_temperature(ds)

    def test_unlabeled_rejected(self):
        ds = make_dataset([[0.7, 0.3]])
        with pytest.raises(DataError, match="label"):
            bl.fit_temperature(ds)

    def test_fitted_beats_unit_temperature_on_distorted_data(self):
        spec = calibrated_spec(n=8000, class_count=10, target_acc=0.7, seed=11)
        from dataclasses import replace

        from accmon.records import true_accuracy

        sharp = generate(replace(spec, temperature_distortion=2.0))
        truth = true_accuracy(sharp)
        fit = bl.fit_temperature(sharp)
        err_fit = abs(bl.estimate_ts(sharp, fit.temperature) - truth)
        err_unit = abs(bl.estimate_ts(sharp, 1.0) - truth)
        assert err_fit < err_unit


class TestRandomSampling:
    def labeled_set(self, n=2000, acc=0.63, seed=12):
        rng = np.random.default_rng(seed)
        correct = rng.random(n) < acc
        return labeled_from_scores(np.full(n, 0.9), correct)

    def test_full_budget_returns_exact_accuracy(self):
        ds = self.labeled_set(n=500)
        from accmon.records import true_accuracy

        rs = bl.estimate_rs(ds, 1.0, repeats=5, seed=0)
        assert rs.minimum == rs.maximum == pytest.approx(true_accuracy(ds))

    def test_small_budget_has_wider_range(self):
        ds = self.labeled_set(n=10_000)
        narrow = bl.estimate_rs(ds, 0.10, repeats=100, seed=1)
        wide = bl.estimate_rs(ds, 0.01, repeats=100, seed=1)
        assert (wide.maximum - wide.minimum) > (narrow.maximum - narrow.minimum)

    def test_deterministic_for_fixed_seed(self):
        ds = self.labeled_set(n=400)
        a = bl.estimate_rs(ds, 0.05, repeats=20, seed=7)
        b = bl.estimate_rs(ds, 0.05, repeats=20, seed=7)
        assert a.estimates == b.estimates

    def test_mean_converges_within_binomial_noise(self):
        ds = self.labeled_set(n=10_000)
        from accmon.records import true_accuracy

        truth = true_accuracy(ds)
        rs = bl.estimate_rs(ds, 0.01, repeats=100, seed=3)
        se = math.sqrt(truth * (1 - truth) / rs.sample_size)
        assert abs(rs.mean - truth) <= 3.0 * se

    def test_requires_labels(self):
        ds = make_dataset([[0.5, 0.5]])
        with pytest.raises(DataError):
            bl.estimate_rs(ds, 0.5)

    def test_rejects_bad_budget(self):
        ds = self.labeled_set(n=100)
        with pytest.raises(ValueError):
            bl.estimate_rs(ds, 0.0)
        with pytest.raises(ValueError):
            bl.estimate_rs(ds, 1.5)


class TestPermutationInvariance:
    def test_all_estimators_ignore_record_order(self):
        rng = np.random.default_rng(13)
        probs = rng.dirichlet(np.ones(6), size=150)
        labels = rng.integers(0, 6, size=150)
        ds = make_dataset(probs, labels)
        perm = rng.permutation(150)
        shuffled = ds.select(perm)
        assert bl.estimate_mp_star(ds) == pytest.approx(
            bl.estimate_mp_star(shuffled), abs=1e-12
        )
        assert bl.estimate_mp(ds, 0.4) == bl.estimate_mp(shuffled, 0.4)
        assert bl.estimate_entropy(ds, 1.0) == bl.estimate_entropy(shuffled, 1.0)
        assert bl.estimate_ts(ds, 2.0) == pytest.approx(
            bl.estimate_ts(shuffled, 2.0), abs=1e-12
        )
        assert bl.fit_temperature(ds).temperature == pytest.approx(
            bl.fit_temperature(shuffled).temperature, abs=1e-6
        )
