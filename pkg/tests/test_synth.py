"""Synthetic generator: accuracy control, distortion direction, splits."""

from dataclasses import replace

import numpy as np
import pytest

from accmon.baselines import estimate_mp_star
from accmon.records import NULL_LABEL, DataError, correctness, true_accuracy
from accmon.synth import ScenarioSpec, calibrated_spec, generate, split


class TestSpecValidation:
    def test_rejects_bad_accuracy(self):
        with pytest.raises(ValueError):
            ScenarioSpec(n=10, class_count=3, target_acc=0.0)
        with pytest.raises(ValueError):
            ScenarioSpec(n=10, class_count=3, target_acc=1.5)

    def test_rejects_bad_distortion(self):
        with pytest.raises(ValueError):
            ScenarioSpec(n=10, class_count=3, target_acc=0.5, temperature_distortion=0.0)

    def test_rejects_bad_null_fraction(self):
        with pytest.raises(ValueError):
            ScenarioSpec(n=10, class_count=3, target_acc=0.5, null_fraction=1.0)


class TestGenerate:
    def test_perfect_accuracy_is_exact(self):
        ds = generate(ScenarioSpec(n=1000, class_count=10, target_acc=1.0, seed=1))
        assert true_accuracy(ds) == 1.0

    def test_accuracy_concentrates_at_target(self):
        ds = generate(ScenarioSpec(n=20_000, class_count=10, target_acc=0.75, seed=2))
        assert true_accuracy(ds) == pytest.approx(0.75, abs=0.01)

    def test_probs_pass_dataset_validation(self):
        ds = generate(ScenarioSpec(n=500, class_count=7, target_acc=0.6, seed=3))
        np.testing.assert_allclose(ds.probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(ds.probs >= 0.0)
        assert len(ds) == 500
        assert ds.labeled_fraction == 1.0

    def test_deterministic_per_seed(self):
        spec = ScenarioSpec(n=300, class_count=5, target_acc=0.7, seed=11)
        a = generate(spec)
        b = generate(spec)
        assert a.probs.tobytes() == b.probs.tobytes()
        assert a.ids == b.ids
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        base = ScenarioSpec(n=300, class_count=5, target_acc=0.7, seed=11)
        assert (
            generate(base).probs.tobytes()
            != generate(replace(base, seed=12)).probs.tobytes()
        )

    def test_two_class_generation(self):
        ds = generate(ScenarioSpec(n=2000, class_count=2, target_acc=0.8, seed=4))
        assert true_accuracy(ds) == pytest.approx(0.8, abs=0.03)

    def test_overconfident_distortion_inflates_mp_star(self):
        spec = ScenarioSpec(
            n=10_000, class_count=10, target_acc=0.4, temperature_distortion=3.0, seed=5
        )
        ds = generate(spec)
        assert estimate_mp_star(ds) > true_accuracy(ds) + 0.1


class TestNullRecords:
    def test_null_fraction_scales_accuracy(self):
        spec = ScenarioSpec(
            n=20_000, class_count=10, target_acc=0.8, null_fraction=0.25, seed=6
        )
        ds = generate(spec)
        assert true_accuracy(ds) == pytest.approx(0.8 * 0.75, abs=0.015)
        n_null = int(np.sum(ds.labels == NULL_LABEL))
        assert n_null == 5000

    def test_null_records_always_incorrect(self):
        spec = ScenarioSpec(
            n=2000, class_count=6, target_acc=0.9, null_fraction=0.3, seed=7
        )
        ds = generate(spec)
        corr = correctness(ds)
        assert np.all(corr[ds.labels == NULL_LABEL] == 0)

    def test_null_profiles_are_flatter(self):
        spec = ScenarioSpec(
            n=4000, class_count=10, target_acc=0.8, null_fraction=0.5,
            temperature_distortion=2.0, seed=8,
        )
        ds = generate(spec)
        mp = ds.probs.max(axis=1)
        null_mask = ds.labels == NULL_LABEL
        assert mp[null_mask].mean() < mp[~null_mask].mean()


class TestCalibratedRegime:
    def test_mp_star_matches_accuracy_when_calibrated(self):
        spec = calibrated_spec(n=20_000, class_count=10, target_acc=0.75, seed=9)
        assert spec.temperature_distortion == 1.0
        ds = generate(spec)
        assert abs(estimate_mp_star(ds) - true_accuracy(ds)) <= 0.02

    def test_calibration_is_deterministic(self):
        a = calibrated_spec(n=100, class_count=10, target_acc=0.7, seed=1)
        b = calibrated_spec(n=100, class_count=10, target_acc=0.7, seed=1)
        assert a.margin_mean == b.margin_mean


class TestSplit:
    def test_identity_split(self):
        ds = generate(ScenarioSpec(n=100, class_count=4, target_acc=0.7, seed=10))
        parts = split(ds, [1.0], seed=0)
        assert len(parts) == 1
        assert sorted(parts[0].ids) == sorted(ds.ids)

    def test_sizes_follow_fractions(self):
        ds = generate(ScenarioSpec(n=50_000, class_count=4, target_acc=0.7, seed=11))
        parts = split(ds, [0.4, 0.4, 0.2], seed=1)
        assert [len(p) for p in parts] == [20_000, 20_000, 10_000]

    def test_parts_partition_the_ids(self):
        ds = generate(ScenarioSpec(n=997, class_count=4, target_acc=0.7, seed=12))
        parts = split(ds, [0.5, 0.3, 0.2], seed=2)
        all_ids = [i for p in parts for i in p.ids]
        assert sorted(all_ids) == sorted(ds.ids)
        assert len(set(all_ids)) == len(all_ids)

    def test_deterministic(self):
        ds = generate(ScenarioSpec(n=200, class_count=4, target_acc=0.7, seed=13))
        a = split(ds, [0.6, 0.4], seed=3)
        b = split(ds, [0.6, 0.4], seed=3)
        assert a[0].ids == b[0].ids

    def test_bad_fractions_rejected(self):
        ds = generate(ScenarioSpec(n=100, class_count=4, target_acc=0.7, seed=14))
        with pytest.raises(DataError, match="sum"):
            split(ds, [0.5, 0.6], seed=0)
        with pytest.raises(DataError):
            split(ds, [-0.5, 1.5], seed=0)
