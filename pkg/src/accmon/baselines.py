"""Comparison estimators: MP threshold, MP*, entropy threshold, temperature
scaling, repeated random sampling.

All estimators are pure functions over immutable datasets and are
permutation-invariant; random-sampling runs carry pre-assigned per-run
seeds so they can execute in any order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .prng import derive_seed
from .records import NULL_LABEL, UNLABELED, DataError, Dataset, correctness, true_accuracy

_LOGIT_EPS = 1e-12
_TAG_RS = 0x52535250

TEMPERATURE_BOUNDS = (0.05, 20.0)


# -- statistics --------------------------------------------------------------


def mp_scores(dataset: Dataset) -> np.ndarray:
    """Maximum softmax probability of every record."""
    return dataset.probs.max(axis=1)


def mp_score(record) -> float:
    return float(np.max(record.probs))


def multiclass_entropies(dataset: Dataset) -> np.ndarray:
    """Prediction entropy (nats) of every record, with 0 * ln 0 = 0."""
    p = dataset.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def multiclass_entropy(record) -> float:
    p = np.asarray(record.probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum())


# -- threshold estimators ----------------------------------------------------


@dataclass(frozen=True)
class ThresholdCalibration:
    """A tuned decision threshold and its residual error on the reference."""

    kind: str
    threshold: float
    calibration_error: float


def estimate_mp(user: Dataset, threshold: float) -> float:
    """Fraction of records whose max softmax probability is >= threshold."""
    return float(np.mean(mp_scores(user) >= threshold))


def estimate_entropy(user: Dataset, threshold: float) -> float:
    """Fraction of records whose prediction entropy is strictly below the
    threshold (low entropy reads as confident, hence correct)."""
    return float(np.mean(multiclass_entropies(user) < threshold))


def calibrate_threshold(reference: Dataset, kind: str) -> ThresholdCalibration:
    """Pick the threshold whose estimate best matches the reference accuracy.

    Scans the midpoints between consecutive sorted unique statistic values
    plus both ends of the statistic's domain ([0, 1] for mp, [0, ln C] for
    entropy); ties resolve to the smaller threshold.
    """
    if kind not in ("mp", "entropy"):
        raise ValueError("kind must be 'mp' or 'entropy'")
    if len(reference) == 0:
        raise DataError("reference dataset is empty")
    truth = true_accuracy(reference)
    if kind == "mp":
        stats = mp_scores(reference)
        lo, hi = 0.0, 1.0
        estimate = lambda th: float(np.mean(stats >= th))  # noqa: E731
    else:
        stats = multiclass_entropies(reference)
        lo, hi = 0.0, math.log(reference.class_count)
        estimate = lambda th: float(np.mean(stats < th))  # noqa: E731
    uniq = np.unique(stats)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    candidates = np.concatenate(([lo], mids, [hi]))
    best_th, best_err = None, None
    for th in candidates:
        err = abs(estimate(float(th)) - truth)
        if best_err is None or err < best_err - 1e-15:
            best_th, best_err = float(th), err
    return ThresholdCalibration(kind=kind, threshold=best_th, calibration_error=best_err)


def estimate_mp_star(user: Dataset) -> float:
    """Mean maximum softmax probability as a direct accuracy estimate."""
    if len(user) == 0:
        raise DataError("user dataset is empty")
    return float(np.mean(mp_scores(user)))


# -- temperature scaling -----------------------------------------------------


@dataclass(frozen=True)
class TemperatureFit:
    temperature: float
    nll: float
    iterations: int


def _recovered_logits(dataset: Dataset) -> np.ndarray:
    # Softmax drops one per-sample additive constant; ln(p + eps) recovers
    # logits exactly up to that shift, which temperature scaling ignores.
    return np.log(dataset.probs + _LOGIT_EPS)


def _nll_at(z: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    zt = z / temperature
    zmax = zt.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(zt - zmax).sum(axis=1))
    picked = zt[np.arange(zt.shape[0]), labels]
    return float(np.mean(lse - picked))


def fit_temperature(labeled: Dataset) -> TemperatureFit:
    """Temperature minimizing the NLL of the labels under scaled logits.

    Golden-section search on ln T over [0.05, 20] (200 iterations or
    interval < 1e-6), then the best of the search result, both bounds and
    T=1 is returned, so the fit never loses to those anchors.  Records with
    the null label carry no class index and are excluded with a warning.
    """
    if len(labeled) == 0:
        raise DataError("labeled dataset is empty")
    unlabeled = labeled.labels == UNLABELED
    if np.any(unlabeled):
        k = int(np.argmax(unlabeled))
        raise DataError(f"record {labeled.ids[k]!r} has no label")
    keep = labeled.labels != NULL_LABEL
    if not np.all(keep):
        warnings.warn(
            f"excluding {int((~keep).sum())} null-labeled record(s) from "
            "temperature fitting",
            stacklevel=2,
        )
    if not np.any(keep):
        raise DataError("no records with class labels to fit a temperature on")
    z = _recovered_logits(labeled)[keep]
    y = labeled.labels[keep]

    lo, hi = (math.log(t) for t in TEMPERATURE_BOUNDS)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _nll_at(z, y, math.exp(c))
    fd = _nll_at(z, y, math.exp(d))
    iterations = 0
    while iterations < 200 and (b - a) > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _nll_at(z, y, math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _nll_at(z, y, math.exp(d))
        iterations += 1
    t_search = math.exp((a + b) / 2.0)

    best_t, best_nll = t_search, _nll_at(z, y, t_search)
    for t in (TEMPERATURE_BOUNDS[0], TEMPERATURE_BOUNDS[1], 1.0):
        nll = _nll_at(z, y, t)
        if nll < best_nll - 1e-15:
            best_t, best_nll = t, nll
    return TemperatureFit(temperature=best_t, nll=best_nll, iterations=iterations)


def estimate_ts(user: Dataset, temperature: float) -> float:
    """Mean max probability after rescaling recovered logits by 1/T.

    T=1 is the identity transform, so it returns exactly the MP* estimate.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if len(user) == 0:
        raise DataError("user dataset is empty")
    if temperature == 1.0:
        return estimate_mp_star(user)
    zt = _recovered_logits(user) / temperature
    zmax = zt.max(axis=1, keepdims=True)
    q = np.exp(zt - zmax)
    q /= q.sum(axis=1, keepdims=True)
    return float(np.mean(q.max(axis=1)))


# -- random sampling ---------------------------------------------------------


@dataclass(frozen=True)
class RandomSamplingSummary:
    """Exact accuracies of repeated random labeled samples."""

    estimates: tuple[float, ...]
    minimum: float
    maximum: float
    mean: float
    sample_size: int


def estimate_rs(
    user: Dataset,
    budget_fraction: float,
    repeats: int = 100,
    seed: int = 0,
) -> RandomSamplingSummary:
    """Accuracy of ceil(budget * n) randomly chosen labeled records, repeated.

    Evaluation-only oracle use: requires labels on the whole pool.  Each run
    samples without replacement with its own derived seed.
    """
    if not 0.0 < budget_fraction <= 1.0:
        raise ValueError("budget_fraction must be in (0, 1]")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    corr = correctness(user).astype(np.float64)
    n = len(user)
    k = math.ceil(budget_fraction * n)
    estimates = []
    for r in range(repeats):
        rng = np.random.default_rng(derive_seed(seed, _TAG_RS, r))
        idx = rng.choice(n, size=k, replace=False)
        estimates.append(float(corr[idx].mean()))
    return RandomSamplingSummary(
        estimates=tuple(estimates),
        minimum=min(estimates),
        maximum=max(estimates),
        mean=float(np.mean(estimates)),
        sample_size=k,
    )
