"""Small feedforward scorers trained to predict correct/wrong classification.

A monitor net maps a softmax probability vector to a scalar score in (0, 1):
dense relu layers, one inverted-scaling dropout layer, and a logistic output
unit, trained with mini-batch Adam on binary cross-entropy.  Everything is
deterministic for a fixed seed: shuffle order and dropout masks both derive
from counter-based streams (``accmon.prng``), so retraining reproduces
parameters bit for bit no matter which kernel backend is active or how the
caller schedules ensemble members.

Training mutates a net in place; nets are not safe for concurrent mutation.
Deterministic forward passes on a finished net are safe from any number of
threads.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import backend
from .prng import derive_seed, epoch_permutation

SCORE_EPS = backend.SCORE_EPS

# Stream tags separating the independent random streams of one training run.
_TAG_PERM = 0x5045524D
_TAG_MASK = 0x4D41534B

_NET_MAGIC = b"ACCMONNET1\n"


class NetFormatError(ValueError):
    """Unreadable or truncated net file."""


@dataclass(frozen=True)
class NetArchitecture:
    """Layer plan: input width, hidden widths, dropout placement.

    ``dropout_position`` is the index of the hidden layer the dropout
    follows.  ``dropout_rate`` of 0 disables dropout entirely.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    dropout_rate: float = 0.25
    dropout_position: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be nonempty")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden widths must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0 <= self.dropout_position < len(self.hidden_dims):
            raise ValueError("dropout_position must index a hidden layer")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, 1]
        return list(zip(dims[:-1], dims[1:]))


def default_hidden_dims(class_count: int) -> tuple[int, ...]:
    """Default monitor widths by input width: wide inputs get wide layers."""
    if class_count >= 1000:
        return (1000, 1000)
    return (100, 50)


@dataclass
class TrainConfig:
    """Optimizer settings; defaults are the shipped operating point."""

    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int = 128
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class MonitorNet:
    """Parameters of one monitor: per-layer weights, biases, trainable flags."""

    architecture: NetArchitecture
    seed: int
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    trainable: list[bool]

    @classmethod
    def initialize(cls, architecture: NetArchitecture, seed: int) -> "MonitorNet":
        """Fresh net: He-scaled Gaussian weights, zero biases, all trainable."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for din, dout in architecture.layer_dims:
            weights.append(rng.standard_normal((din, dout)) * np.sqrt(2.0 / din))
            biases.append(np.zeros(dout))
        return cls(
            architecture=architecture,
            seed=seed,
            weights=weights,
            biases=biases,
            trainable=[True] * len(weights),
        )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MonitorNet":
        return MonitorNet(
            architecture=self.architecture,
            seed=self.seed,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            trainable=list(self.trainable),
        )


def _check_input(net: MonitorNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.architecture.input_dim,):
        raise ValueError(
            f"input has shape {x.shape}, net expects ({net.architecture.input_dim},)"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def forward(
    net: MonitorNet,
    x: np.ndarray,
    dropout_active: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Score one input vector; result lies strictly inside (0, 1).

    With ``dropout_active`` and a positive rate, each unit of the designated
    hidden layer is zeroed independently with probability ``dropout_rate``
    and survivors are scaled by 1/(1-rate); the mask is drawn from ``rng``.
    """
    x = _check_input(net, x)
    arch = net.architecture
    a = x
    for l in range(net.n_layers - 1):
        a = np.maximum(a @ net.weights[l] + net.biases[l], 0.0)
        if dropout_active and arch.dropout_rate > 0.0 and l == arch.dropout_position:
            if rng is None:
                raise ValueError("dropout_active requires an rng")
            keep = rng.random(a.shape[0]) >= arch.dropout_rate
            a = a * keep / (1.0 - arch.dropout_rate)
    z = float(a @ net.weights[-1][:, 0] + net.biases[-1][0])
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-z))
    return float(np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS))


def scores(net: MonitorNet, inputs: np.ndarray) -> np.ndarray:
    """Deterministic scores for a batch of inputs (dropout off)."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.architecture.input_dim:
        raise ValueError(
            f"inputs have shape {inputs.shape}, net expects (n, {net.architecture.input_dim})"
        )
    return backend.batch_scores(net.weights, net.biases, inputs)


def bce_loss(score: float, target: float) -> float:
    """Binary cross-entropy in nats; the score is clamped before the logs."""
    s = min(max(score, SCORE_EPS), 1.0 - SCORE_EPS)
    return float(-(target * np.log(s) + (1.0 - target) * np.log(1.0 - s)))


def gradient(
    net: MonitorNet,
    x: np.ndarray,
    target: float,
    dropout_mask: np.ndarray | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (dW, db) of the loss for a single sample.

    ``dropout_mask``, when given, is a fixed pre-scaled mask (entries 0 or
    1/(1-rate)) applied after the dropout layer's relu, matching a frozen
    stochastic forward pass.  Returns gradients for every layer; training
    ignores the frozen ones.
    """
    x = _check_input(net, x)
    arch = net.architecture
    acts = [x]
    zs = []
    a = x
    for l in range(net.n_layers - 1):
        z = a @ net.weights[l] + net.biases[l]
        a = np.maximum(z, 0.0)
        if dropout_mask is not None and l == arch.dropout_position:
            a = a * dropout_mask
        zs.append(z)
        acts.append(a)
    z_out = a @ net.weights[-1] + net.biases[-1]
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-z_out))

    delta = s - target
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.n_layers  # type: ignore[list-item]
    for l in range(net.n_layers - 1, -1, -1):
        grads[l] = (np.outer(acts[l], delta), delta.copy())
        if l > 0:
            delta = delta @ net.weights[l].T
            if dropout_mask is not None and l - 1 == arch.dropout_position:
                delta = delta * dropout_mask
            delta = delta * (zs[l - 1] > 0.0)
    return grads


def train(
    net: MonitorNet,
    inputs: np.ndarray | Sequence[np.ndarray],
    targets: np.ndarray,
    config: TrainConfig,
) -> list[float]:
    """Mini-batch Adam descent on mean BCE with dropout active.

    Mutates the net in place (trainable layers only) and returns the
    per-epoch mean training loss.  Bit-identical results for equal seeds.
    """
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    y = np.ascontiguousarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training set is empty")
    if x.shape[1] != net.architecture.input_dim:
        raise ValueError(
            f"inputs have width {x.shape[1]}, net expects {net.architecture.input_dim}"
        )
    if y.shape != (x.shape[0],):
        raise ValueError("targets are not aligned with inputs")

    arch = net.architecture
    dropout_layer = arch.dropout_position if arch.dropout_rate > 0.0 else -1
    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]
    trainable = np.array(net.trainable, dtype=np.uint8)
    perm_stream = derive_seed(config.seed, _TAG_PERM)

    n = x.shape[0]
    history: list[float] = []
    adam_step = 0
    for epoch in range(config.epochs):
        perm = epoch_permutation(perm_stream, epoch, n)
        mask_base = derive_seed(config.seed, _TAG_MASK, epoch)
        loss_sum, adam_step = backend.run_train_epoch(
            net.weights,
            net.biases,
            m_w,
            v_w,
            m_b,
            v_b,
            trainable,
            x,
            y,
            perm,
            config.batch_size,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_epsilon,
            arch.dropout_rate,
            dropout_layer,
            mask_base,
            adam_step,
        )
        history.append(loss_sum / n)
    return history


def freeze_prefix(net: MonitorNet, trainable_tail: int = 2) -> MonitorNet:
    """Keep only the last ``trainable_tail`` affine layers trainable.

    Counts the output layer; everything earlier is frozen bit-exactly
    through any subsequent training.  Mutates and returns the net.
    """
    if not 0 <= trainable_tail <= net.n_layers:
        raise ValueError(
            f"trainable_tail {trainable_tail} exceeds layer count {net.n_layers}"
        )
    cut = net.n_layers - trainable_tail
    net.trainable = [i >= cut for i in range(net.n_layers)]
    return net


# -- net files ---------------------------------------------------------------
#
# Layout (documented for stability):
#   bytes 0..10   magic b"ACCMONNET1\n"
#   bytes 11..18  little-endian uint64 header length H
#   next H bytes  UTF-8 JSON header: input_dim, hidden_dims, dropout_rate,
#                 dropout_position, seed, trainable, layer_shapes
#   remainder     row-major little-endian float64 data: W0, b0, W1, b1, ...


def save_net(net: MonitorNet, path: str | os.PathLike) -> None:
    from .util import atomic_write

    header = json.dumps(
        {
            "input_dim": net.architecture.input_dim,
            "hidden_dims": list(net.architecture.hidden_dims),
            "dropout_rate": net.architecture.dropout_rate,
            "dropout_position": net.architecture.dropout_position,
            "seed": net.seed,
            "trainable": [bool(t) for t in net.trainable],
            "layer_shapes": [list(w.shape) for w in net.weights],
        },
        sort_keys=True,
    ).encode("utf-8")
    with atomic_write(path, binary=True) as fh:
        fh.write(_NET_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_net(path: str | os.PathLike) -> MonitorNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_NET_MAGIC):
        raise NetFormatError(f"{path}: not a monitor net file (bad magic)")
    off = len(_NET_MAGIC)
    if len(blob) < off + 8:
        raise NetFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) < off + hlen:
        raise NetFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
        arch = NetArchitecture(
            input_dim=int(header["input_dim"]),
            hidden_dims=tuple(header["hidden_dims"]),
            dropout_rate=float(header["dropout_rate"]),
            dropout_position=int(header["dropout_position"]),
        )
        shapes = [tuple(s) for s in header["layer_shapes"]]
        trainable = [bool(t) for t in header["trainable"]]
        seed = int(header["seed"])
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise NetFormatError(f"{path}: corrupt header ({e})") from None
    if shapes != [tuple(s) for s in map(list, arch.layer_dims)] or len(trainable) != len(shapes):
        raise NetFormatError(f"{path}: header inconsistent with architecture")
    off += hlen
    weights, biases = [], []
    for din, dout in shapes:
        wbytes = din * dout * 8
        if len(blob) < off + wbytes + dout * 8:
            raise NetFormatError(f"{path}: truncated parameter data")
        weights.append(
            np.frombuffer(blob, dtype="<f8", count=din * dout, offset=off)
            .reshape(din, dout)
            .copy()
        )
        off += wbytes
        biases.append(np.frombuffer(blob, dtype="<f8", count=dout, offset=off).copy())
        off += dout * 8
    if off != len(blob):
        raise NetFormatError(f"{path}: trailing bytes after parameter data")
    return MonitorNet(
        architecture=arch, seed=seed, weights=weights, biases=biases, trainable=trainable
    )
