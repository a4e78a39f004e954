"""Synthetic softmax-log generator with controllable ground truth.

Emulates a deployed classifier's output stream at desk scale: the true
accuracy is controlled exactly by per-record coin flips, while confidence
shape is controlled independently through the logit geometry.  The
confidence profile mimics real classifier logs with three margin clusters:

* confident: top-vs-runner-up margin around ``margin_mean``, diffuse tail;
  most correct predictions live here.
* ambiguous: margin around the midpoint level, with a strong boosted
  runner-up (a two-way confusion); populated by hard-but-right records and
  by wrong records whose competitor won, so its correctness is genuinely
  mixed.
* unconfident: margin around ``margin_mean * wrong_margin_factor``, boosted
  runner-up (the true class); most wrong predictions live here.

The ``temperature_distortion`` multiplier sharpens (>1, overconfident
regimes such as adversarial or shifted data) or flattens (<1) the
probabilities without touching the accuracy.  Null-labeled records imitate
out-of-distribution inputs: flatter profiles, never correct.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .records import NULL_LABEL, DataError, Dataset

_MARGIN_FLOOR = 1e-3

# Elevation of boosted competitor classes above the best remaining noise
# class.  Ambiguous records show one such competitor (a two-way confusion),
# unconfident ones show two (multi-way confusion); confident records keep a
# diffuse tail.  The count is a scale-free signature of the cluster.
_COMPETITOR_GAP_MEAN = 1.3
_COMPETITOR_GAP_STD = 0.4

# Margin offset separating correct from wrong records inside the ambiguous
# cluster: hard-but-right records still edge out their competitor a little
# more than records the competitor actually beat.
_AMBIGUOUS_TILT = 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    """Generator parameters for one synthetic dataset.

    Correct predictions draw the confident margin cluster except for an
    ``underconfident_fraction`` of hard-but-right records that fall into the
    ambiguous middle cluster.  Wrong predictions draw the unconfident
    cluster except for an ``overconfident_fraction`` of confidently-wrong
    records (fooled exactly like adversarial inputs: they sit in the
    confident cluster with a diffuse tail and are indistinguishable there)
    and a ``confused_fraction`` that land in the ambiguous middle.  All
    clusters share the spread ``margin_std``.  ``target_acc`` is the
    probability a non-null record is predicted correctly, so empirical
    accuracy converges to ``target_acc * (1 - null_fraction)``.
    """

    n: int
    class_count: int
    target_acc: float
    margin_mean: float = 1.5
    margin_std: float = 0.25
    wrong_margin_factor: float = 0.25
    underconfident_fraction: float = 0.05
    overconfident_fraction: float = 0.08
    confused_fraction: float = 0.12
    temperature_distortion: float = 1.0
    null_fraction: float = 0.0
    seed: int = 0

    @property
    def middle_margin_factor(self) -> float:
        """Ambiguous-cluster level: midway between confident and unconfident."""
        return (1.0 + self.wrong_margin_factor) / 2.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not 0.0 < self.target_acc <= 1.0:
            raise ValueError("target_acc must be in (0, 1]")
        if self.margin_mean <= 0.0:
            raise ValueError("margin_mean must be > 0")
        if self.margin_std < 0.0:
            raise ValueError("margin_std must be >= 0")
        if self.wrong_margin_factor <= 0.0:
            raise ValueError("wrong_margin_factor must be > 0")
        if not 0.0 <= self.underconfident_fraction < 1.0:
            raise ValueError("underconfident_fraction must be in [0, 1)")
        if not 0.0 <= self.overconfident_fraction < 1.0:
            raise ValueError("overconfident_fraction must be in [0, 1)")
        if not 0.0 <= self.confused_fraction < 1.0:
            raise ValueError("confused_fraction must be in [0, 1)")
        if self.overconfident_fraction + self.confused_fraction >= 1.0:
            raise ValueError(
                "overconfident_fraction + confused_fraction must be < 1"
            )
        if self.temperature_distortion <= 0.0:
            raise ValueError("temperature_distortion must be > 0")
        if not 0.0 <= self.null_fraction < 1.0:
            raise ValueError("null_fraction must be in [0, 1)")


def generate(spec: ScenarioSpec) -> Dataset:
    """Fully labeled dataset realizing the scenario; bit-identical per spec."""
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n, spec.class_count

    is_null = np.zeros(n, dtype=bool)
    n_null = int(round(spec.null_fraction * n))
    if n_null:
        is_null[rng.choice(n, size=n_null, replace=False)] = True

    y = rng.integers(0, c, size=n)
    correct = (rng.random(n) < spec.target_acc) & ~is_null
    offset = rng.integers(1, c, size=n)
    top = np.where(correct, y, (y + offset) % c)

    logits = rng.standard_normal((n, c))
    mix = rng.random(n)
    # Cluster membership: correct records are confident unless drawn into
    # the ambiguous middle; wrong records are unconfident unless fooled
    # into the confident cluster or confused into the middle.
    ambiguous = np.where(
        correct,
        mix < spec.underconfident_fraction,
        (mix >= spec.overconfident_fraction)
        & (mix < spec.overconfident_fraction + spec.confused_fraction),
    )
    fooled = ~correct & (mix < spec.overconfident_fraction)
    confident = (correct & ~ambiguous) | fooled
    unconfident = ~correct & ~ambiguous & ~fooled

    # Margin level by cluster, with a small correctness tilt inside the
    # ambiguous cluster so its correct/wrong mix grades with the margin.
    tilt = _AMBIGUOUS_TILT * spec.margin_std
    level = np.where(
        confident,
        spec.margin_mean,
        np.where(
            ambiguous,
            spec.margin_mean * spec.middle_margin_factor
            + np.where(correct, tilt, -tilt),
            spec.margin_mean * spec.wrong_margin_factor,
        ),
    )
    margins = np.maximum(
        level + spec.margin_std * rng.standard_normal(n), _MARGIN_FLOOR
    )
    gap_a = np.maximum(
        _COMPETITOR_GAP_MEAN + _COMPETITOR_GAP_STD * rng.standard_normal(n),
        _MARGIN_FLOOR,
    )
    gap_b = np.maximum(
        _COMPETITOR_GAP_MEAN + _COMPETITOR_GAP_STD * rng.standard_normal(n),
        _MARGIN_FLOOR,
    )
    rows = np.arange(n)

    # First competitor: the true class when the prediction is wrong (or for
    # null records' stand-in class), an almost-confused alternative when it
    # is right.  Second competitor (unconfident records only): another class
    # distinct from both.  Class count limits how many can exist.
    alt = (top + rng.integers(1, c, size=n)) % c
    comp1 = np.where(top != y, y, alt)
    off1 = (comp1 - top) % c
    off2 = rng.integers(1, max(c - 1, 2), size=n)
    off2 = off2 + (off2 >= off1)
    comp2 = (top + off2) % c

    boost1 = (ambiguous | unconfident) if c >= 3 else np.zeros(n, dtype=bool)
    boost2 = unconfident if c >= 4 else np.zeros(n, dtype=bool)
    logits[rows, top] = -np.inf
    logits[rows[boost1], comp1[boost1]] = -np.inf
    logits[rows[boost2], comp2[boost2]] = -np.inf
    noise_max = logits.max(axis=1)
    second = np.where(boost2, noise_max + gap_b, noise_max)
    logits[rows[boost2], comp2[boost2]] = second[boost2]
    runner_up = np.where(boost1, np.maximum(second, noise_max) + gap_a, second)
    logits[rows[boost1], comp1[boost1]] = runner_up[boost1]
    logits[rows, top] = runner_up + margins

    scale = np.where(is_null, spec.temperature_distortion / 2.0, spec.temperature_distortion)
    z = logits * scale[:, None]
    z -= z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)

    labels = np.where(is_null, NULL_LABEL, y).astype(np.int64)
    width = max(6, len(str(n - 1)))
    ids = [f"s{i:0{width}d}" for i in range(n)]
    return Dataset(ids, probs, labels)


def split(dataset: Dataset, fractions: Sequence[float], seed: int = 0) -> list[Dataset]:
    """Disjoint cover of the records with sizes proportional to ``fractions``
    (deterministic shuffle, cumulative rounding keeps the total exact)."""
    fractions = [float(f) for f in fractions]
    if not fractions or any(f < 0 for f in fractions):
        raise DataError("fractions must be nonnegative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions sum to {sum(fractions)!r}, expected 1")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = [int(round(cum * n)) for cum in np.cumsum(fractions)]
    bounds[-1] = n
    parts = []
    start = 0
    for stop in bounds:
        parts.append(dataset.select(perm[start:stop]))
        start = stop
    return parts


def calibrate_margin_mean(
    class_count: int,
    target_acc: float,
    margin_std: float = 0.45,
    wrong_margin_factor: float = 0.45,
    pilot_n: int = 6000,
    seed: int = 0,
) -> float:
    """Margin mean at which mean max-probability matches the accuracy.

    Defines the calibrated regime: at distortion 1 with this margin, the
    MP* statistic of a generated set tracks its true accuracy.  Solved by
    bisection on a pilot sample (mean max-probability is monotone in the
    margin mean).
    """
    lo, hi = 0.05, 14.0

    def pilot_gap(margin_mean: float) -> float:
        spec = ScenarioSpec(
            n=pilot_n,
            class_count=class_count,
            target_acc=target_acc,
            margin_mean=margin_mean,
            margin_std=margin_std,
            wrong_margin_factor=wrong_margin_factor,
            temperature_distortion=1.0,
            null_fraction=0.0,
            seed=seed,
        )
        data = generate(spec)
        return float(np.mean(data.probs.max(axis=1))) - target_acc

    if pilot_gap(lo) > 0 or pilot_gap(hi) < 0:
        raise ValueError(
            f"no calibrated margin in [{lo}, {hi}] for accuracy {target_acc}"
        )
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if pilot_gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrated_spec(
    n: int,
    class_count: int,
    target_acc: float,
    seed: int = 0,
    **overrides,
) -> ScenarioSpec:
    """A scenario whose MP* statistic matches its true accuracy at
    distortion 1 (margin mean tuned by :func:`calibrate_margin_mean`)."""
    base = ScenarioSpec(n=n, class_count=class_count, target_acc=target_acc, seed=seed)
    probe = replace(base, **overrides) if overrides else base
    margin = calibrate_margin_mean(
        class_count=class_count,
        target_acc=target_acc,
        margin_std=probe.margin_std,
        wrong_margin_factor=probe.wrong_margin_factor,
    )
    return replace(probe, margin_mean=margin)
