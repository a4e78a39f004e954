#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Runs the hot kernels (training epochs and batched score passes) on a
representative monitor workload, reports per-epoch wall time for each
available backend, and cross-checks that both backends produce the same
numbers (they consume identical dropout/shuffle streams, so results agree
to float round-off).

Usage:
    python benchmarks/bench_backends.py [--n 9000] [--epochs 10]
"""

import argparse
import time

import numpy as np

from accmon.backend import available_backends, kernels as numpy_kernels
from accmon.mlp import MonitorNet, NetArchitecture
from accmon.prng import derive_seed, epoch_permutation

try:
    from accmon.backend import _core as compiled_kernels
except ImportError:
    compiled_kernels = None


def make_workload(n, class_count, hidden, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(class_count), size=n)
    y = (x[:, 0] > np.median(x[:, 0])).astype(np.float64)
    arch = NetArchitecture(input_dim=class_count, hidden_dims=hidden)
    return x, y, arch


def train_epochs(kernels, arch, x, y, epochs, seed=3):
    net = MonitorNet.initialize(arch, seed=7)
    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]
    trainable = np.ones(len(net.weights), dtype=np.uint8)
    step = 0
    start = time.perf_counter()
    for epoch in range(epochs):
        perm = epoch_permutation(derive_seed(seed, 1), epoch, x.shape[0])
        _, step = kernels.run_train_epoch(
            net.weights, net.biases, m_w, v_w, m_b, v_b, trainable, x, y, perm,
            128, 0.001, 0.9, 0.999, 1e-8,
            arch.dropout_rate, arch.dropout_position, derive_seed(seed, 2, epoch), step,
        )
    elapsed = time.perf_counter() - start
    return net, elapsed / epochs


def score_pass(kernels, net, x, repeats=5):
    start = time.perf_counter()
    for _ in range(repeats):
        scores = kernels.batch_scores(net.weights, net.biases, x)
    return scores, (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=9000)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--hidden", default="100,50")
    parser.add_argument("--epochs", type=int, default=10)
    args = parser.parse_args()

    hidden = tuple(int(h) for h in args.hidden.split(","))
    x, y, arch = make_workload(args.n, args.classes, hidden)
    print(f"workload: n={args.n}, C={args.classes}, hidden={hidden}, "
          f"batch=128, dropout={arch.dropout_rate}")
    print(f"available backends: {', '.join(available_backends())}\n")

    results = {}
    backends = [("numpy", numpy_kernels)]
    if compiled_kernels is not None:
        backends.append(("compiled", compiled_kernels))
    for name, kernels in backends:
        net, per_epoch = train_epochs(kernels, arch, x, y, args.epochs)
        scores, per_pass = score_pass(kernels, net, x)
        results[name] = (net, scores, per_epoch, per_pass)
        print(f"{name:>9}: {per_epoch * 1e3:8.1f} ms/train-epoch   "
              f"{per_pass * 1e3:7.2f} ms/score-pass")

    if len(results) == 2:
        net_a, scores_a, ep_a, _ = results["numpy"]
        net_b, scores_b, ep_b, _ = results["compiled"]
        dev = max(
            float(np.max(np.abs(wa - wb)))
            for wa, wb in zip(net_a.weights + net_a.biases, net_b.weights + net_b.biases)
        )
        print(f"\nspeedup (train): {ep_a / ep_b:.2f}x")
        print(f"max parameter deviation after {args.epochs} epochs: {dev:.3g}")
        print(f"max score deviation: {float(np.max(np.abs(scores_a - scores_b))):.3g}")


if __name__ == "__main__":
    main()
