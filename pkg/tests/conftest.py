"""Shared helpers: count-vector constructors and synthetic pools."""

from __future__ import annotations

import numpy as np
import pytest

from albalance.dataset import EmbeddingStore, LabelOracle, PoolState, label_batch
from albalance.synth import blob_centers, sample_blobs


def make_counts(n_classes: int, total: int, target_ir: float) -> np.ndarray:
    """Integer per-class counts with an exact total and ir close to target.

    Starts from a symmetric two-level profile around the mean and repairs the
    spread with paired +-1 moves (which keep the total fixed) until the ratio
    is within 2e-4 of the target.
    """
    base = total // n_classes
    rem = total - base * n_classes
    counts = np.full(n_classes, base, dtype=np.int64)
    counts[:rem] += 1
    mu = total / n_classes
    spread = int(round(target_ir * mu * np.sqrt(n_classes / max(1, n_classes - 1))))
    for i in range(n_classes // 2):
        d = min(spread, int(counts[n_classes - 1 - i]) - 1)
        counts[i] += d
        counts[n_classes - 1 - i] -= d

    def ir(c: np.ndarray) -> float:
        return float(c.std() / c.mean())

    for _ in range(100_000):
        err = ir(counts) - target_ir
        if abs(err) <= 2e-4:
            break
        hi, lo = int(np.argmax(counts)), int(np.argmin(counts))
        if err < 0:
            counts[hi] += 1
            counts[lo] -= 1
        else:
            counts[hi] -= 1
            counts[lo] += 1
    assert counts.sum() == total and counts.min() >= 1
    assert abs(ir(counts) - target_ir) <= 2e-4
    return counts


def separable_two_blob(n_per_class: int = 25, seed: int = 0):
    """Two 2-D blobs with a between-class margin of at least 1 by construction.

    Noise is radially clipped to 0.75, centers sit at x = -2 and x = +2, so
    the slab |x| < 1.25 is empty and the x = 0 hyperplane separates with
    margin well above 1.
    """
    rng = np.random.default_rng(seed)
    pts = []
    labels = []
    for c, cx in enumerate((-2.0, 2.0)):
        noise = rng.normal(0.0, 0.5, size=(n_per_class, 2))
        norms = np.linalg.norm(noise, axis=1, keepdims=True)
        noise = noise * np.minimum(1.0, 0.75 / np.maximum(norms, 1e-12))
        pts.append(np.array([cx, 0.0]) + noise)
        labels.extend([c] * n_per_class)
    vectors = np.concatenate(pts).astype(np.float32)
    assert np.abs(vectors[:, 0]).min() >= 1.25
    store = EmbeddingStore.from_array(vectors)
    oracle = LabelOracle(labels=np.asarray(labels), class_names=("neg", "pos"))
    pool = label_batch(
        PoolState.empty(store.n_samples, 2), list(range(store.n_samples)), oracle
    )
    return store, oracle, pool


@pytest.fixture(scope="session")
def small_blob_pool():
    """4 well-separated classes, imbalanced counts, with a labeled seed set."""
    centers = blob_centers(4, 8, 6.0, 21)
    store, oracle = sample_blobs(centers, [40, 25, 15, 10], 1.0, 22)
    return store, oracle


def fully_labeled(store: EmbeddingStore, oracle: LabelOracle) -> PoolState:
    return label_batch(
        PoolState.empty(store.n_samples, oracle.n_classes),
        list(range(store.n_samples)),
        oracle,
    )
