"""Kernel backend selection.

The hot kernels (mini-batch training epochs, batched score passes) exist
twice: a Cython extension (``_core``) and a pure numpy fallback
(``kernels``).  The compiled core is preferred when importable; set
``ACCMON_BACKEND=numpy`` or ``ACCMON_BACKEND=compiled`` to force a choice.
Both consume identical random streams; see ``benchmarks/bench_backends.py``
for a speed and agreement comparison.
"""

from __future__ import annotations

import os

from . import kernels as _numpy_kernels

try:
    from . import _core as _compiled_kernels  # type: ignore[attr-defined]
except ImportError:
    _compiled_kernels = None


def _select():
    choice = os.environ.get("ACCMON_BACKEND", "auto").lower()
    if choice in ("numpy", "python", "fallback"):
        return _numpy_kernels, "numpy"
    if choice in ("compiled", "cython", "core"):
        if _compiled_kernels is None:
            raise ImportError(
                "ACCMON_BACKEND=compiled but the accmon.backend._core extension "
                "is not built; run `python setup.py build_ext --inplace`"
            )
        return _compiled_kernels, "compiled"
    if _compiled_kernels is not None:
        return _compiled_kernels, "compiled"
    return _numpy_kernels, "numpy"


_impl, BACKEND = _select()

run_train_epoch = _impl.run_train_epoch
batch_scores = _impl.batch_scores

SCORE_EPS = _numpy_kernels.SCORE_EPS


def available_backends() -> list[str]:
    names = ["numpy"]
    if _compiled_kernels is not None:
        names.append("compiled")
    return names
