"""Counter-based pseudo-random helpers shared by every kernel backend.

All training-time randomness (epoch shuffles, dropout masks, derived seeds)
is produced by the splitmix64 finalizer applied to explicit counters.  Both
the compiled kernel and the numpy fallback evaluate the same function on the
same counters, so they consume identical random streams regardless of which
backend is active.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2**-53: top 53 bits of a mixed counter become a uniform double in [0, 1).
UNIT53 = 1.0 / 9007199254740992.0


def mix64(x: int) -> int:
    """splitmix64 step for integer state ``x``; returns a 64-bit output."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64` over a uint64 array."""
    z = (x + np.uint64(_GOLDEN)).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniform_from_counters(counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles from uint64 counters."""
    return (mix64_array(counters) >> np.uint64(11)).astype(np.float64) * UNIT53


def derive_seed(base: int, *tags: int) -> int:
    """Deterministic 64-bit seed derived from a base seed and integer tags.

    Used to give each ensemble member, training stream and mask stream its
    own independent counter space.
    """
    acc = base & _MASK64
    for tag in tags:
        acc = mix64(acc ^ mix64(tag & _MASK64))
    return acc


def epoch_permutation(stream: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle order for one epoch: argsort of per-index mixed keys.

    Identical on every platform and backend; ties (never in practice for
    64-bit keys) resolve by index via the stable sort.
    """
    base = np.uint64(derive_seed(stream, epoch))
    keys = mix64_array(base + np.arange(n, dtype=np.uint64))
    return np.argsort(keys, kind="stable").astype(np.int64)
