"""Seeded Gaussian-blob datasets for experiments and tests."""

from __future__ import annotations

import numpy as np

from .dataset import EmbeddingStore, LabelOracle
from .rng import substream


def blob_centers(n_classes: int, dim: int, spread: float, seed: int) -> np.ndarray:
    """Class centers drawn once so train/test pools share geometry."""
    rng = substream(seed, "blob-centers")
    return rng.normal(0.0, spread, size=(n_classes, dim))


def sample_blobs(
    centers: np.ndarray,
    per_class,
    cluster_std: float,
    seed: int,
    *,
    normalize: bool = False,
    name_prefix: str = "s",
) -> tuple[EmbeddingStore, LabelOracle]:
    """Draw ``per_class[c]`` points around each center; rows grouped by class."""
    per_class = np.asarray(per_class, dtype=np.int64)
    n_classes, dim = centers.shape
    if per_class.shape[0] != n_classes:
        raise ValueError(f"{per_class.shape[0]} counts for {n_classes} centers")
    rng = substream(seed, "blob-samples")
    rows = []
    labels = []
    for c in range(n_classes):
        rows.append(centers[c] + rng.normal(0.0, cluster_std, size=(int(per_class[c]), dim)))
        labels.extend([c] * int(per_class[c]))
    vectors = np.concatenate(rows).astype(np.float32)
    names = [f"{name_prefix}_{i:06d}" for i in range(vectors.shape[0])]
    store = EmbeddingStore.from_array(vectors, names, normalize=normalize)
    oracle = LabelOracle(
        labels=np.asarray(labels, dtype=np.int64),
        class_names=tuple(f"class_{c:03d}" for c in range(n_classes)),
    )
    return store, oracle
