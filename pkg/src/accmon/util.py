"""Small shared helpers: atomic file writes and canonical JSON."""

from __future__ import annotations

import json
import os
from contextlib import contextmanager


@contextmanager
def atomic_write(path: str | os.PathLike, binary: bool = False):
    """Write to a temp file next to ``path`` and rename on success.

    Guarantees the destination is never left half-written.
    """
    path = os.fspath(path)
    tmp = path + ".tmp"
    mode = "wb" if binary else "w"
    fh = open(tmp, mode, **({} if binary else {"encoding": "utf-8"}))
    try:
        yield fh
        fh.close()
        os.replace(tmp, path)
    except BaseException:
        fh.close()
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    """Deterministic JSON text (sorted keys, fixed separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=2) + "\n"
