"""Imbalance statistics, imbalance induction and labeled-pool profiles.

The imbalance ratio of a count vector is std/mean, with std the population
standard deviation (divide by n). A balanced dataset has ratio 0; larger
values mean more skew.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingStore, LabelOracle, PoolState
from .rng import substream

IR_TOLERANCE = 0.01


class ImbalanceError(Exception):
    pass


class InfeasibleTargetError(ImbalanceError):
    """The target ratio cannot be produced under the given floors/caps."""


class TargetUnreachableError(ImbalanceError):
    """Bisection did not land within tolerance inside max_iters steps."""


@dataclass(frozen=True)
class ImbalanceStats:
    per_class: tuple[int, ...]
    mean: float
    std: float
    ir: float

    def as_dict(self) -> dict:
        return {
            "per_class": list(self.per_class),
            "mean": self.mean,
            "std": self.std,
            "ir": self.ir,
        }


@dataclass(frozen=True)
class InductionSpec:
    target_ir: float
    min_per_class: int
    rng_seed: int
    max_iters: int = 100

    def __post_init__(self) -> None:
        if self.target_ir < 0:
            raise ValueError(f"target_ir must be >= 0, got {self.target_ir}")
        if self.min_per_class < 1:
            raise ValueError(f"min_per_class must be >= 1, got {self.min_per_class}")


def imbalance_ratio(per_class) -> ImbalanceStats:
    """Mean, population std and std/mean ratio of a per-class count vector."""
    counts = np.asarray(per_class, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ImbalanceError("per-class counts must be a non-empty 1-D vector")
    if (counts < 0).any():
        raise ImbalanceError("per-class counts must be non-negative")
    if counts.sum() == 0:
        raise ImbalanceError("per-class counts are all zero")
    mean = float(np.mean(counts))
    std = float(np.std(counts))
    return ImbalanceStats(
        per_class=tuple(int(c) for c in counts), mean=mean, std=std, ir=std / mean
    )


def _decay_profile(
    caps_in_order: np.ndarray, q: float, min_per_class: int, head: int
) -> np.ndarray:
    n = caps_in_order.shape[0]
    raw = head * np.power(q, np.arange(n, dtype=np.float64))
    targets = np.rint(raw)
    targets = np.minimum(np.maximum(targets, min_per_class), caps_in_order)
    return targets.astype(np.int64)


def induce_imbalance(per_class, spec: InductionSpec) -> np.ndarray:
    """Prune a per-class count vector to hit a target imbalance ratio.

    Targets follow a truncated geometric-decay profile over a random class
    order; the decay rate is solved by bisection until the resulting ratio is
    within ``IR_TOLERANCE`` of ``spec.target_ir``. The result never exceeds
    the input counts elementwise and never drops below ``min_per_class``.
    """
    counts = np.asarray(per_class, dtype=np.int64)
    if counts.sum() <= 0:
        raise ImbalanceError("cannot induce imbalance on an empty dataset")
    if (counts < spec.min_per_class).any():
        raise InfeasibleTargetError(
            f"min_per_class={spec.min_per_class} exceeds the size of the smallest class "
            f"({int(counts.min())})"
        )
    order = substream(spec.rng_seed, "induction").permutation(counts.shape[0])
    caps = counts[order]
    head = int(counts.max())

    def ratio_at(q: float) -> tuple[float, np.ndarray]:
        profile = _decay_profile(caps, q, spec.min_per_class, head)
        return imbalance_ratio(profile).ir, profile

    def unshuffle(profile: np.ndarray) -> np.ndarray:
        out = np.empty_like(profile)
        out[order] = profile
        return out

    hi = 1.0
    lo = 1e-9
    ir_hi, _ = ratio_at(hi)  # identity: profile equals the input counts
    ir_lo, prof_lo = ratio_at(lo)  # steepest feasible decay
    if abs(ir_hi - spec.target_ir) <= IR_TOLERANCE:
        return counts.copy()
    if abs(ir_lo - spec.target_ir) <= IR_TOLERANCE:
        return unshuffle(prof_lo)
    if spec.target_ir > ir_lo or spec.target_ir < ir_hi:
        raise InfeasibleTargetError(
            f"target ir {spec.target_ir} outside the achievable range "
            f"[{ir_hi:.4f}, {ir_lo:.4f}]"
        )
    for _ in range(spec.max_iters):
        mid = 0.5 * (lo + hi)
        ir_mid, prof_mid = ratio_at(mid)
        if abs(ir_mid - spec.target_ir) <= IR_TOLERANCE:
            return unshuffle(prof_mid)
        if ir_mid > spec.target_ir:
            lo = mid
        else:
            hi = mid
    raise TargetUnreachableError(
        f"target ir {spec.target_ir} not reached within {spec.max_iters} bisection steps"
    )


def prune_dataset(
    store: EmbeddingStore, oracle: LabelOracle, counts, rng_seed: int
) -> tuple[EmbeddingStore, LabelOracle]:
    """Keep exactly ``counts[c]`` uniformly chosen samples of each class.

    Retained samples keep their relative order; ids are re-densified to
    0..n_kept-1.
    """
    counts = np.asarray(counts, dtype=np.int64)
    available = oracle.class_counts()
    if counts.shape[0] != oracle.n_classes:
        raise ImbalanceError(
            f"got {counts.shape[0]} counts for {oracle.n_classes} classes"
        )
    if (counts > available).any():
        bad = int(np.argmax(counts > available))
        raise ImbalanceError(
            f"class {bad}: requested {int(counts[bad])} samples, only "
            f"{int(available[bad])} available"
        )
    rng = substream(rng_seed, "prune")
    keep: list[np.ndarray] = []
    for c in range(oracle.n_classes):
        ids_c = np.flatnonzero(oracle.labels == c)
        if counts[c] > 0:
            keep.append(rng.choice(ids_c, size=int(counts[c]), replace=False))
    kept = np.sort(np.concatenate(keep)) if keep else np.empty(0, dtype=np.int64)
    new_store = EmbeddingStore(
        vectors=np.ascontiguousarray(store.vectors[kept]),
        sample_names=tuple(store.sample_names[int(i)] for i in kept),
        normalized=store.normalized,
    )
    new_oracle = LabelOracle(labels=oracle.labels[kept].copy(), class_names=oracle.class_names)
    return new_store, new_oracle


def labeled_profile(pool: PoolState) -> ImbalanceStats:
    """Imbalance statistics of the labeled pool, zero-labeled classes included."""
    if pool.n_labeled == 0:
        raise ImbalanceError("labeled set is empty")
    return imbalance_ratio(pool.per_class_counts)
