"""Reference numpy implementation of the hot training/scoring kernels.

The compiled extension (``_core``) implements exactly these semantics; this
module is the fallback used when the extension is not built.  Both backends
consume identical dropout-mask and shuffle streams (see ``accmon.prng``), so
they differ only by floating-point summation order.

Conventions shared by both backends:

* weights[l] has shape (fan_in, fan_out); activations are row batches.
* hidden layers apply relu; the dropout mask (if any) follows hidden layer
  ``dropout_layer`` and scales surviving units by 1/(1-rate).
* the output layer is a single logistic unit; scores are clamped into
  [SCORE_EPS, 1-SCORE_EPS] for losses and returned scores.
* the mask for epoch slot ``s`` (position in the shuffled epoch order) and
  unit ``j`` is drawn from counter ``mask_base + s*H + j``: kept iff the
  mixed uniform is >= dropout_rate.
* Adam keeps one shared step counter incremented per mini-batch; frozen
  layers are skipped entirely (parameters and moments untouched).
"""

from __future__ import annotations

import numpy as np

from ..prng import uniform_from_counters

SCORE_EPS = 1e-12


def _dropout_mask(mask_base: int, slot0: int, m: int, width: int, rate: float) -> np.ndarray:
    """Scaled mask block for epoch slots [slot0, slot0+m): 0 or 1/(1-rate)."""
    counters = np.uint64(mask_base) + np.arange(
        slot0 * width, (slot0 + m) * width, dtype=np.uint64
    )
    u = uniform_from_counters(counters).reshape(m, width)
    return (u >= rate).astype(np.float64) * (1.0 / (1.0 - rate))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def batch_scores(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
    dropout_rate: float = 0.0,
    dropout_layer: int = -1,
    mask_base: int | None = None,
) -> np.ndarray:
    """Scores for every row of ``x``.

    Deterministic when ``mask_base`` is None; otherwise one stochastic
    dropout pass with masks keyed by row index.
    """
    a = np.ascontiguousarray(x, dtype=np.float64)
    n = a.shape[0]
    for l in range(len(weights) - 1):
        a = np.maximum(a @ weights[l] + biases[l], 0.0)
        if l == dropout_layer and dropout_rate > 0.0 and mask_base is not None:
            a = a * _dropout_mask(mask_base, 0, n, a.shape[1], dropout_rate)
    z = a @ weights[-1] + biases[-1]
    s = _sigmoid(z[:, 0])
    return np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)


def run_train_epoch(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    m_w: list[np.ndarray],
    v_w: list[np.ndarray],
    m_b: list[np.ndarray],
    v_b: list[np.ndarray],
    trainable: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    perm: np.ndarray,
    batch_size: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    dropout_rate: float,
    dropout_layer: int,
    mask_base: int,
    adam_step: int,
) -> tuple[float, int]:
    """One epoch of mini-batch Adam on mean binary cross-entropy.

    Mutates parameters and Adam moments in place.  Returns the summed
    per-sample training loss (caller divides by n) and the updated shared
    Adam step counter.
    """
    n = x.shape[0]
    n_layers = len(weights)
    loss_sum = 0.0
    t = adam_step
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        m = idx.shape[0]
        acts = [x[idx]]
        zs = []
        mask = None
        a = acts[0]
        for l in range(n_layers - 1):
            z = a @ weights[l] + biases[l]
            a = np.maximum(z, 0.0)
            if l == dropout_layer and dropout_rate > 0.0:
                mask = _dropout_mask(mask_base, start, m, a.shape[1], dropout_rate)
                a = a * mask
            zs.append(z)
            acts.append(a)
        z_out = a @ weights[-1] + biases[-1]
        s = _sigmoid(z_out[:, 0])
        c = np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)
        yb = y[idx]
        loss_sum += float(-np.sum(yb * np.log(c) + (1.0 - yb) * np.log(1.0 - c)))

        # Backward pass; delta carries the 1/m of the batch-mean loss.
        delta = ((s - yb) / m)[:, None]
        grads_w: list[np.ndarray | None] = [None] * n_layers
        grads_b: list[np.ndarray | None] = [None] * n_layers
        for l in range(n_layers - 1, -1, -1):
            grads_w[l] = acts[l].T @ delta
            grads_b[l] = delta.sum(axis=0)
            if l > 0:
                delta = delta @ weights[l].T
                if l - 1 == dropout_layer and mask is not None:
                    delta = delta * mask
                delta = delta * (zs[l - 1] > 0.0)

        t += 1
        bc1 = 1.0 - beta1**t
        bc2 = 1.0 - beta2**t
        for l in range(n_layers):
            if not trainable[l]:
                continue
            for param, mom, vel, g in (
                (weights[l], m_w[l], v_w[l], grads_w[l]),
                (biases[l], m_b[l], v_b[l], grads_b[l]),
            ):
                mom *= beta1
                mom += (1.0 - beta1) * g
                vel *= beta2
                vel += (1.0 - beta2) * np.square(g)
                param -= lr * (mom / bc1) / (np.sqrt(vel / bc2) + eps)
    return loss_sum, t
