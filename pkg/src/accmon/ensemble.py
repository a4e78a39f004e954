"""Ensemble accuracy monitoring: pre-train, actively select, transfer, estimate.

The full loop: train B independently-seeded monitor nets on a labeled
reference set; score the user's records; pick the top ``t%`` by ensemble
score entropy for manual labeling; fine-tune every member on that subset
with all but the last two layers frozen; report the threshold-count
accuracy estimate with its ensemble mean/std, optionally blended with the
exact accuracy of the labeled records.

Members never share mutable state and their seeds are pre-assigned, so the
ensemble can be fanned out across workers with results bit-identical to
sequential execution.
"""

from __future__ import annotations

import math
import os
import shutil
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .mlp import (
    MonitorNet,
    NetArchitecture,
    TrainConfig,
    default_hidden_dims,
    freeze_prefix,
    load_net,
    save_net,
    train,
)
from .prng import derive_seed, mix64_array
from .records import DataError, Dataset, SoftmaxRecord, correctness, true_accuracy
from .util import atomic_write, canonical_json

INFERENCE_MODES = ("deterministic", "mc_dropout")
ACQUISITION_METHODS = ("mean_entropy", "entropy_of_mean")

DEFAULT_MEMBERS = 20
DEFAULT_BUDGET_FRACTION = 0.01
DEFAULT_THRESHOLD = 0.5

# Stream tags for per-member and per-purpose seed derivation.
_TAG_MEMBER = 0x4D454D42
_TAG_TRAIN = 0x54524149
_TAG_TRANSFER = 0x58464552
_TAG_MC = 0x4D435052
_TAG_STREAM = 0x53545245

_MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class AcquisitionScore:
    """Ensemble score entropy for one record; high values mark uncertainty."""

    id: str
    entropy: float


@dataclass(frozen=True)
class AccuracyEstimate:
    """Ensemble accuracy estimate over a monitored pool.

    ``mean``/``std``/``per_model`` describe the threshold-count estimates of
    the individual members over the monitored records (std is the population
    standard deviation).  When a labeled subset participates, its exact
    accuracy and the size-weighted ``blended`` value are recorded
    separately; ``estimate`` is the headline number either way.
    """

    mean: float
    std: float
    per_model: tuple[float, ...]
    threshold: float
    n_labeled: int
    n_monitored: int
    labeled_accuracy: float | None = None
    blended: float | None = None

    @property
    def estimate(self) -> float:
        return self.blended if self.blended is not None else self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "per_model": list(self.per_model),
            "threshold": self.threshold,
            "n_labeled": self.n_labeled,
            "n_monitored": self.n_monitored,
            "labeled_accuracy": self.labeled_accuracy,
            "blended": self.blended,
            "estimate": self.estimate,
        }


@dataclass
class Ensemble:
    """B monitor nets sharing an architecture, independently seeded."""

    members: list[MonitorNet]
    architecture: NetArchitecture
    master_seed: int
    inference_mode: str = "deterministic"
    threshold: float = DEFAULT_THRESHOLD
    train_history: list[list[float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        if self.inference_mode not in INFERENCE_MODES:
            raise ValueError(f"inference_mode must be one of {INFERENCE_MODES}")

    @property
    def size(self) -> int:
        return len(self.members)


def member_seed(master_seed: int, index: int) -> int:
    """Pre-assigned seed of ensemble member ``index``."""
    return derive_seed(master_seed, _TAG_MEMBER, index)


def pretrain_ensemble(
    reference: Dataset,
    architecture: NetArchitecture | None = None,
    members: int = DEFAULT_MEMBERS,
    config: TrainConfig | None = None,
    master_seed: int = 0,
    inference_mode: str = "deterministic",
) -> Ensemble:
    """Train ``members`` monitors on (softmax, correctness) reference pairs.

    Members differ only by their derived seeds (initial weights, shuffle and
    dropout streams).  Per-member loss histories are kept on the ensemble.
    """
    if members < 1:
        raise ValueError("members must be >= 1")
    config = config or TrainConfig()
    if architecture is None:
        architecture = NetArchitecture(
            input_dim=reference.class_count,
            hidden_dims=default_hidden_dims(reference.class_count),
        )
    if reference.class_count != architecture.input_dim:
        raise DataError(
            f"reference has {reference.class_count} classes, "
            f"architecture expects {architecture.input_dim}"
        )
    targets = correctness(reference).astype(np.float64)
    nets: list[MonitorNet] = []
    histories: list[list[float]] = []
    for b in range(members):
        seed_b = member_seed(master_seed, b)
        net = MonitorNet.initialize(architecture, seed_b)
        hist = train(
            net,
            reference.probs,
            targets,
            config.with_seed(derive_seed(seed_b, _TAG_TRAIN, config.seed)),
        )
        nets.append(net)
        histories.append(hist)
    return Ensemble(
        members=nets,
        architecture=architecture,
        master_seed=master_seed,
        inference_mode=inference_mode,
        train_history=histories,
    )


def member_scores(ensemble: Ensemble, dataset: Dataset) -> np.ndarray:
    """(B, n) score matrix for a dataset.

    Deterministic forward passes by default; in ``mc_dropout`` mode each
    member makes one stochastic pass with seeded masks keyed by record
    index, so repeated calls still agree.
    """
    if dataset.class_count != ensemble.architecture.input_dim:
        raise DataError(
            f"dataset has {dataset.class_count} classes, "
            f"ensemble expects {ensemble.architecture.input_dim}"
        )
    x = dataset.probs
    arch = ensemble.architecture
    rows = []
    for b, net in enumerate(ensemble.members):
        if ensemble.inference_mode == "mc_dropout" and arch.dropout_rate > 0.0:
            rows.append(
                backend.batch_scores(
                    net.weights,
                    net.biases,
                    x,
                    arch.dropout_rate,
                    arch.dropout_position,
                    derive_seed(member_seed(ensemble.master_seed, b), _TAG_MC),
                )
            )
        else:
            rows.append(backend.batch_scores(net.weights, net.biases, x))
    return np.stack(rows)


def _binary_entropy(s: np.ndarray) -> np.ndarray:
    # Scores are clamped inside (0, 1), so both logs are finite.
    return -(s * np.log(s) + (1.0 - s) * np.log(1.0 - s))


def acquisition_entropies(
    ensemble: Ensemble, dataset: Dataset, method: str = "mean_entropy"
) -> np.ndarray:
    """Per-record acquisition entropy over the ensemble.

    ``mean_entropy`` (default) averages the members' binary score entropies;
    ``entropy_of_mean`` takes the entropy of the mean score.
    """
    if method not in ACQUISITION_METHODS:
        raise ValueError(f"method must be one of {ACQUISITION_METHODS}")
    s = member_scores(ensemble, dataset)
    if method == "mean_entropy":
        return _binary_entropy(s).mean(axis=0)
    return _binary_entropy(s.mean(axis=0))


def acquisition_entropy(ensemble: Ensemble, record: SoftmaxRecord) -> AcquisitionScore:
    """Acquisition entropy of a single record."""
    tiny = Dataset([record.id], record.probs[None, :], np.array([-2]))
    value = acquisition_entropies(ensemble, tiny)[0]
    return AcquisitionScore(id=record.id, entropy=float(value))


def select_for_labeling(
    ensemble: Ensemble,
    user: Dataset,
    budget_fraction: float = DEFAULT_BUDGET_FRACTION,
    method: str = "mean_entropy",
) -> list[str]:
    """Ids of the ceil(budget * n) user records with the highest entropy.

    Ties break toward the lower record index; the result is identical
    across runs and worker counts.
    """
    if not 0.0 < budget_fraction <= 1.0:
        raise ValueError("budget_fraction must be in (0, 1]")
    if len(user) == 0:
        raise DataError("user dataset is empty")
    k = math.ceil(budget_fraction * len(user))
    entropies = acquisition_entropies(ensemble, user, method)
    order = np.argsort(-entropies, kind="stable")
    return [user.ids[i] for i in order[:k]]


def transfer_ensemble(
    ensemble: Ensemble,
    labeled_subset: Dataset,
    config: TrainConfig | None = None,
    trainable_tail: int = 2,
) -> Ensemble:
    """Fine-tune every member on the labeled subset with a frozen prefix.

    Returns a new ensemble; the input is untouched.  Frozen layers come out
    bit-identical to their pre-transfer values.
    """
    if len(labeled_subset) == 0:
        raise DataError("labeled subset is empty")
    config = config or TrainConfig()
    targets = correctness(labeled_subset).astype(np.float64)
    if labeled_subset.class_count != ensemble.architecture.input_dim:
        raise DataError(
            f"subset has {labeled_subset.class_count} classes, "
            f"ensemble expects {ensemble.architecture.input_dim}"
        )
    nets = []
    histories = []
    for b, net in enumerate(ensemble.members):
        tuned = freeze_prefix(net.copy(), trainable_tail)
        seed_b = member_seed(ensemble.master_seed, b)
        hist = train(
            tuned,
            labeled_subset.probs,
            targets,
            config.with_seed(derive_seed(seed_b, _TAG_TRANSFER, config.seed)),
        )
        nets.append(tuned)
        histories.append(hist)
    return Ensemble(
        members=nets,
        architecture=ensemble.architecture,
        master_seed=ensemble.master_seed,
        inference_mode=ensemble.inference_mode,
        threshold=ensemble.threshold,
        train_history=histories,
    )


def estimate_accuracy(
    ensemble: Ensemble,
    user: Dataset,
    threshold: float | None = None,
    labeled_subset: Dataset | None = None,
    blend: bool = True,
) -> AccuracyEstimate:
    """Threshold-count accuracy estimate over the user set.

    Each member counts the fraction of monitored records whose score meets
    the threshold.  With a labeled subset, the monitored pool excludes those
    records and (when ``blend`` is on, the default) the headline estimate
    is the size-weighted combination of exact labeled accuracy and the
    ensemble mean.
    """
    if len(user) == 0:
        raise DataError("user dataset is empty")
    th = ensemble.threshold if threshold is None else threshold
    if not 0.0 < th < 1.0:
        raise ValueError(f"threshold {th} outside (0, 1)")

    if labeled_subset is not None and len(labeled_subset) > 0:
        subset_ids = labeled_subset.ids
        labeled_acc = true_accuracy(labeled_subset)
        pool = user.exclude_ids(subset_ids)  # validates subset ids exist
        n_labeled = len(labeled_subset)
    else:
        labeled_acc = None
        pool = user
        n_labeled = 0

    scores = member_scores(ensemble, pool)
    per_model = (scores >= th).mean(axis=1)
    mean = float(per_model.mean())
    std = float(per_model.std())
    blended = None
    if labeled_acc is not None and blend:
        total = n_labeled + len(pool)
        blended = (n_labeled * labeled_acc + len(pool) * mean) / total
    return AccuracyEstimate(
        mean=mean,
        std=std,
        per_model=tuple(float(v) for v in per_model),
        threshold=th,
        n_labeled=n_labeled,
        n_monitored=len(pool),
        labeled_accuracy=labeled_acc,
        blended=blended,
    )


@dataclass(frozen=True)
class StreamBatch:
    """One streamed batch: estimate, its ensemble std, truth when labeled."""

    index: int
    estimate: float
    std: float
    true_accuracy: float | None
    record_indices: np.ndarray = field(repr=False, compare=False)


def stream_estimate(
    ensemble: Ensemble,
    user: Dataset,
    batch_size: int = 500,
    batches: int = 100,
    seed: int = 0,
    threshold: float | None = None,
) -> list[StreamBatch]:
    """Estimates over repeated batches drawn from the user pool with
    replacement; no relabeling or retraining happens between batches.

    True per-batch accuracy is reported when the pool is fully labeled.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batches < 1:
        raise ValueError("batches must be >= 1")
    if len(user) == 0:
        raise DataError("user dataset is empty")
    th = ensemble.threshold if threshold is None else threshold
    if not 0.0 < th < 1.0:
        raise ValueError(f"threshold {th} outside (0, 1)")

    hits = member_scores(ensemble, user) >= th
    labeled = user.labeled_fraction == 1.0
    truth = correctness(user).astype(np.float64) if labeled else None

    n = len(user)
    out = []
    for b in range(batches):
        base = np.uint64(derive_seed(seed, _TAG_STREAM, b))
        draws = mix64_array(base + np.arange(batch_size, dtype=np.uint64))
        idx = (draws % np.uint64(n)).astype(np.int64)
        per_model = hits[:, idx].mean(axis=1)
        out.append(
            StreamBatch(
                index=b,
                estimate=float(per_model.mean()),
                std=float(per_model.std()),
                true_accuracy=float(truth[idx].mean()) if truth is not None else None,
                record_indices=idx,
            )
        )
    return out


# -- ensemble directories ----------------------------------------------------
#
# Layout: <dir>/manifest.json plus one net file per member
# (member_000.mnet, member_001.mnet, ...).


def _member_filename(index: int) -> str:
    return f"member_{index:03d}.mnet"


def save_ensemble(ensemble: Ensemble, dirpath: str | os.PathLike) -> None:
    """Write the ensemble directory; replaces any existing one atomically
    (staged build, then swap)."""
    dirpath = os.fspath(dirpath)
    staging = dirpath + ".staging"
    if os.path.exists(staging):
        shutil.rmtree(staging)
    os.makedirs(staging)
    try:
        arch = ensemble.architecture
        manifest = {
            "format": 1,
            "kind": "accmon-ensemble",
            "members": ensemble.size,
            "master_seed": ensemble.master_seed,
            "inference_mode": ensemble.inference_mode,
            "threshold": ensemble.threshold,
            "architecture": {
                "input_dim": arch.input_dim,
                "hidden_dims": list(arch.hidden_dims),
                "dropout_rate": arch.dropout_rate,
                "dropout_position": arch.dropout_position,
            },
        }
        with atomic_write(os.path.join(staging, _MANIFEST_NAME)) as fh:
            fh.write(canonical_json(manifest))
        for i, net in enumerate(ensemble.members):
            save_net(net, os.path.join(staging, _member_filename(i)))
        if os.path.exists(dirpath):
            old = dirpath + ".replaced"
            if os.path.exists(old):
                shutil.rmtree(old)
            os.rename(dirpath, old)
            os.rename(staging, dirpath)
            shutil.rmtree(old)
        else:
            os.rename(staging, dirpath)
    except BaseException:
        if os.path.exists(staging):
            shutil.rmtree(staging)
        raise


def load_ensemble(dirpath: str | os.PathLike) -> Ensemble:
    dirpath = os.fspath(dirpath)
    manifest_path = os.path.join(dirpath, _MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise DataError(f"{dirpath}: not an ensemble directory (missing manifest)")
    import json

    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"{manifest_path}: invalid JSON ({e.msg})") from None
    if manifest.get("kind") != "accmon-ensemble" or manifest.get("format") != 1:
        raise DataError(f"{manifest_path}: unsupported manifest kind/format")
    arch_info = manifest["architecture"]
    arch = NetArchitecture(
        input_dim=int(arch_info["input_dim"]),
        hidden_dims=tuple(arch_info["hidden_dims"]),
        dropout_rate=float(arch_info["dropout_rate"]),
        dropout_position=int(arch_info["dropout_position"]),
    )
    members = []
    for i in range(int(manifest["members"])):
        path = os.path.join(dirpath, _member_filename(i))
        if not os.path.isfile(path):
            raise DataError(f"{dirpath}: missing member file {_member_filename(i)}")
        net = load_net(path)
        if net.architecture != arch:
            raise DataError(f"{path}: architecture disagrees with manifest")
        members.append(net)
    return Ensemble(
        members=members,
        architecture=arch,
        master_seed=int(manifest["master_seed"]),
        inference_mode=str(manifest["inference_mode"]),
        threshold=float(manifest["threshold"]),
    )
