"""Softmax record datasets: validation, ingestion, correctness labels.

A record is one output of the deployed classifier being monitored: a
probability vector over ``C`` classes plus an optional true label.  Datasets
are immutable after construction and safe to share across threads.

File formats
------------
JSONL  one object per line::

    {"id": "s00042", "probs": [0.1, 0.7, 0.2], "label": 1}

  ``label`` may be an integer class index, the string ``"NULL"`` for
  out-of-distribution records that belong to no class, or absent/None for
  unlabeled records.

CSV    header ``id,label,p0,...,p{C-1}``; an empty label cell means
  unlabeled, the literal ``NULL`` means the null label.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

#: Label marker for out-of-distribution records: never equals a predicted
#: class (those are >= 0), so such records always score as incorrect.
NULL_LABEL = -1

#: Internal array sentinel for records with no label at all.
UNLABELED = -2

#: Maximum tolerated |sum(probs) - 1| before a row is rejected.
PROB_SUM_TOL = 1e-4


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class SoftmaxRecord:
    """One classifier output: probabilities, optional label, argmax class.

    ``label`` is a class index, ``NULL_LABEL`` or None (unlabeled).
    ``predicted`` is the lowest index attaining the maximum probability.
    """

    id: str
    probs: np.ndarray
    label: int | None
    predicted: int

    def is_labeled(self) -> bool:
        return self.label is not None


class Dataset:
    """Ordered, validated collection of softmax records with a common C.

    Stores columnar arrays internally; iterate or index to obtain
    :class:`SoftmaxRecord` views.  Instances are treated as immutable.
    """

    def __init__(self, ids: Sequence[str], probs: np.ndarray, labels: np.ndarray):
        probs = np.ascontiguousarray(probs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if probs.ndim != 2 or probs.shape[1] < 2:
            raise DataError("probability matrix must be (n, C) with C >= 2")
        if len(ids) != probs.shape[0] or labels.shape[0] != probs.shape[0]:
            raise DataError("ids, probs and labels lengths disagree")
        self.ids: list[str] = [str(i) for i in ids]
        if len(set(self.ids)) != len(self.ids):
            dup = _first_duplicate(self.ids)
            raise DataError(f"duplicate record id {dup!r}")
        _validate_probs(probs)
        # Renormalize rows that need it; rows already summing to 1 within a
        # few ulp pass through untouched so reload/serialize is byte-stable.
        sums = probs.sum(axis=1)
        deviant = np.abs(sums - 1.0) > 1e-12
        if np.any(deviant):
            probs = probs.copy()
            probs[deviant] /= sums[deviant, None]
        self.probs = probs
        self.labels = labels
        self.class_count = probs.shape[1]
        bad = (labels < UNLABELED) | (labels >= self.class_count)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise DataError(
                f"record {self.ids[k]!r}: label {int(labels[k])} outside 0..{self.class_count - 1}"
            )
        self.predicted = np.argmax(self.probs, axis=1).astype(np.int64)
        self._index_by_id: dict[str, int] | None = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_records(cls, records: Iterable[SoftmaxRecord]) -> "Dataset":
        records = list(records)
        if not records:
            raise DataError("dataset is empty")
        widths = {len(r.probs) for r in records}
        if len(widths) != 1:
            raise DataError(f"inconsistent class counts {sorted(widths)}")
        probs = np.stack([np.asarray(r.probs, dtype=np.float64) for r in records])
        labels = np.array(
            [UNLABELED if r.label is None else int(r.label) for r in records],
            dtype=np.int64,
        )
        return cls([r.id for r in records], probs, labels)

    # -- container protocol ------------------------------------------------

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __getitem__(self, i: int) -> SoftmaxRecord:
        lab = int(self.labels[i])
        return SoftmaxRecord(
            id=self.ids[i],
            probs=self.probs[i],
            label=None if lab == UNLABELED else lab,
            predicted=int(self.predicted[i]),
        )

    def __iter__(self) -> Iterator[SoftmaxRecord]:
        return (self[i] for i in range(len(self)))

    # -- derived views -----------------------------------------------------

    @property
    def labeled_fraction(self) -> float:
        return float(np.mean(self.labels != UNLABELED))

    def index_of(self, record_id: str) -> int:
        if self._index_by_id is None:
            self._index_by_id = {rid: k for k, rid in enumerate(self.ids)}
        try:
            return self._index_by_id[record_id]
        except KeyError:
            raise DataError(f"unknown record id {record_id!r}") from None

    def select(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            [self.ids[i] for i in idx], self.probs[idx].copy(), self.labels[idx].copy()
        )

    def subset_by_ids(self, record_ids: Sequence[str]) -> "Dataset":
        return self.select([self.index_of(r) for r in record_ids])

    def exclude_ids(self, record_ids: Sequence[str]) -> "Dataset":
        drop = {self.index_of(r) for r in record_ids}
        keep = [i for i in range(len(self)) if i not in drop]
        if not keep:
            raise DataError("excluding these ids leaves an empty dataset")
        return self.select(keep)


def _first_duplicate(ids: Sequence[str]) -> str:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            return i
        seen.add(i)
    return ""


def _validate_probs(probs: np.ndarray) -> None:
    if not np.all(np.isfinite(probs)):
        k = int(np.argmax(~np.isfinite(probs).all(axis=1)))
        raise DataError(f"non-finite probability in row {k}")
    if np.any(probs < 0):
        k = int(np.argmax((probs < 0).any(axis=1)))
        raise DataError(f"negative probability in row {k}")
    dev = np.abs(probs.sum(axis=1) - 1.0)
    if np.any(dev > PROB_SUM_TOL):
        k = int(np.argmax(dev > PROB_SUM_TOL))
        raise DataError(
            f"row {k}: probabilities sum to {probs[k].sum():.6f}, "
            f"deviation exceeds {PROB_SUM_TOL}"
        )


# -- operations -------------------------------------------------------------


def correctness(dataset: Dataset) -> np.ndarray:
    """Binary vector: 1 where the predicted class equals the label.

    Every record must carry a label; the null label counts as labeled and is
    always scored 0.
    """
    unlabeled = dataset.labels == UNLABELED
    if np.any(unlabeled):
        k = int(np.argmax(unlabeled))
        raise DataError(f"record {dataset.ids[k]!r} has no label")
    return (dataset.labels == dataset.predicted).astype(np.uint8)


def true_accuracy(dataset: Dataset) -> float:
    """Fraction of records the deployed classifier got right."""
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    return float(np.mean(correctness(dataset)))


# -- file ingestion / serialization -----------------------------------------


def _parse_label(raw, where: str) -> int:
    if raw is None:
        return UNLABELED
    if isinstance(raw, str):
        s = raw.strip()
        if s == "":
            return UNLABELED
        if s == "NULL":
            return NULL_LABEL
        try:
            return int(s)
        except ValueError:
            raise DataError(f"{where}: bad label {raw!r}") from None
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise DataError(f"{where}: bad label {raw!r}")
    return int(raw)


def load_dataset(path: str | os.PathLike, format: str | None = None) -> Dataset:
    """Load and validate a dataset file.

    ``format`` is ``"jsonl"`` or ``"csv"``; when None it is inferred from the
    file extension.  Probability vectors whose sum deviates from 1 by at most
    ``PROB_SUM_TOL`` are renormalized; larger deviations, negative entries,
    inconsistent widths and duplicate ids are errors that name the offending
    line.
    """
    path = os.fspath(path)
    if format is None:
        format = "csv" if path.lower().endswith(".csv") else "jsonl"
    if format not in ("jsonl", "csv"):
        raise DataError(f"unknown dataset format {format!r}")
    if format == "csv":
        ids, rows, labels = _read_csv(path)
    else:
        ids, rows, labels = _read_jsonl(path)
    if not rows:
        raise DataError(f"{path}: no records")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: inconsistent class counts {sorted(widths)}")
    try:
        return Dataset(ids, np.array(rows, dtype=np.float64), np.array(labels))
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def _read_jsonl(path: str):
    ids, rows, labels = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj or "probs" not in obj:
                raise DataError(f"{where}: expected object with 'id' and 'probs'")
            probs = obj["probs"]
            if not isinstance(probs, list) or len(probs) < 2:
                raise DataError(f"{where}: 'probs' must be a list of >= 2 numbers")
            try:
                row = [float(v) for v in probs]
            except (TypeError, ValueError):
                raise DataError(f"{where}: non-numeric probability") from None
            ids.append(str(obj["id"]))
            rows.append(row)
            labels.append(_parse_label(obj.get("label"), where))
    return ids, rows, labels


def _read_csv(path: str):
    ids, rows, labels = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 4 or header[0] != "id" or header[1] != "label":
            raise DataError(f"{path}:1: header must be id,label,p0,...,p{{C-1}}")
        expected = ["p%d" % k for k in range(len(header) - 2)]
        if list(header[2:]) != expected:
            raise DataError(f"{path}:1: probability columns must be p0..p{len(header) - 3}")
        width = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != width + 2:
                raise DataError(f"{where}: expected {width + 2} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[2:]])
            except ValueError:
                raise DataError(f"{where}: non-numeric probability") from None
            ids.append(row[0])
            labels.append(_parse_label(row[1], where))
    return ids, rows, labels


def _label_for_file(lab: int) -> int | str | None:
    if lab == UNLABELED:
        return None
    if lab == NULL_LABEL:
        return "NULL"
    return int(lab)


def save_dataset(dataset: Dataset, path: str | os.PathLike, format: str | None = None) -> None:
    """Serialize a dataset; floats are written with shortest round-trip repr,
    so load(save(d)) reproduces every probability exactly."""
    path = os.fspath(path)
    if format is None:
        format = "csv" if path.lower().endswith(".csv") else "jsonl"
    from .util import atomic_write

    if format == "jsonl":
        with atomic_write(path) as fh:
            for i in range(len(dataset)):
                obj = {"id": dataset.ids[i], "probs": [float(v) for v in dataset.probs[i]]}
                lab = _label_for_file(int(dataset.labels[i]))
                if lab is not None:
                    obj["label"] = lab
                fh.write(json.dumps(obj) + "\n")
    elif format == "csv":
        with atomic_write(path) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "label"] + ["p%d" % k for k in range(dataset.class_count)])
            for i in range(len(dataset)):
                lab = _label_for_file(int(dataset.labels[i]))
                writer.writerow(
                    [dataset.ids[i], "" if lab is None else lab]
                    + [repr(float(v)) for v in dataset.probs[i]]
                )
    else:
        raise DataError(f"unknown dataset format {format!r}")
