"""Evaluation of estimators: estimation error, precision-recall, AUPR.

AUPR uses the average-precision (step) formulation with ties processed as a
block, so it is deterministic, order-independent and invariant under any
strictly monotone transformation of the scores.  The positive class
defaults to "correct prediction"; pass ``positive="wrong"`` to rank
misclassification detection instead (negate ascending statistics like
entropy before calling).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


def estimation_error(estimate: float, true_acc: float) -> float:
    """Absolute gap between an estimate and the true accuracy."""
    return abs(float(estimate) - float(true_acc))


@dataclass(frozen=True)
class PRCurve:
    """Threshold sweep from strictest to loosest: one point per distinct
    score value, recalls non-decreasing."""

    recalls: tuple[float, ...]
    precisions: tuple[float, ...]
    positive_ratio: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recalls, self.precisions))


def _blocks(scores: np.ndarray, positives: np.ndarray):
    """Cumulative (predicted, true positive) counts at each distinct score,
    descending; a tied group enters as one block."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positives[order].astype(np.float64)
    n = s.shape[0]
    last_of_block = np.nonzero(np.diff(s))[0]
    ends = np.concatenate((last_of_block, [n - 1]))
    cum_tp = np.cumsum(p)[ends]
    cum_n = ends + 1.0
    return cum_n, cum_tp


def _positives(correct: np.ndarray, positive: str) -> np.ndarray:
    corr = np.asarray(correct)
    if corr.ndim != 1:
        raise ValueError("correctness must be a 1-d vector")
    if positive == "correct":
        return corr != 0
    if positive == "wrong":
        return corr == 0
    raise ValueError("positive must be 'correct' or 'wrong'")


def aupr(scores, correct, positive: str = "correct") -> float:
    """Area under the precision-recall curve (average precision).

    Perfect ranking gives 1.0; uninformative constant scores give exactly
    the positive-class ratio.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = _positives(correct, positive)
    if scores.shape != pos.shape:
        raise ValueError(
            f"scores and correctness lengths disagree ({scores.shape} vs {pos.shape})"
        )
    total = float(pos.sum())
    if total == 0:
        raise ValueError("no positive records to rank")
    cum_n, cum_tp = _blocks(scores, pos)
    precision = cum_tp / cum_n
    block_tp = np.diff(np.concatenate(([0.0], cum_tp)))
    return float(np.sum(precision * block_tp) / total)


def pr_curve(scores, correct, positive: str = "correct") -> PRCurve:
    """The (recall, precision) points behind :func:`aupr`."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = _positives(correct, positive)
    if scores.shape != pos.shape:
        raise ValueError(
            f"scores and correctness lengths disagree ({scores.shape} vs {pos.shape})"
        )
    total = float(pos.sum())
    if total == 0:
        raise ValueError("no positive records to rank")
    cum_n, cum_tp = _blocks(scores, pos)
    return PRCurve(
        recalls=tuple(float(v) for v in cum_tp / total),
        precisions=tuple(float(v) for v in cum_tp / cum_n),
        positive_ratio=total / scores.shape[0],
    )


def write_pr_csv(curve: PRCurve, path: str | os.PathLike) -> None:
    """Two-column CSV (recall, precision) for external plotting."""
    from .util import atomic_write

    with atomic_write(path) as fh:
        fh.write("recall,precision\n")
        for r, p in curve.points:
            fh.write(f"{r!r},{p!r}\n")
