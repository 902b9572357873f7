"""Acquisition functions for iterative pool-based selection.

Baselines: uniform random, smallest top-2 margin, greedy k-center coverage
(coreset) and centroid-based certainty-diversified sampling (cds-bal).

The minority-class-oriented family works in two stages. Stage one computes a
per-class labeling quota equal to each class's deficit below the mean labeled
count (classes at or above the mean get none), capped at the iteration
budget, then picks that many samples from the unlabeled samples *predicted*
as each minority class: by descending margin (CMCS), ascending margin (UMCS)
or greedy k-center diversity (DMCS). Stage two fills any remaining budget
with an auxiliary function (random or margin).

All selection is deterministic: randomness comes from the context seed, and
every score tie breaks toward the lowest sample id.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .classifiers import ClassifierModel, predict_proba, top2_margins
from .dataset import EmbeddingStore, PoolState
from .rng import substream

# ~4M float64 elements (32 MB) per distance block
_DIST_BLOCK_ELEMS = 4_000_000


class AcquisitionError(Exception):
    pass


class MissingModelError(AcquisitionError):
    """The acquisition function needs model predictions but none were given."""


class EmptyLabeledSetError(AcquisitionError):
    pass


class UnknownAuxiliaryError(AcquisitionError):
    pass


class McsVariant(str, Enum):
    CMCS = "cmcs"
    UMCS = "umcs"
    DMCS = "dmcs"


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything one acquisition step may look at.

    ``model`` is absent only at iteration 0, which the runner always fills by
    random seeding. ``per_iter_budget`` may exceed the unlabeled count on the
    final iteration; selection then truncates to what is left.
    """

    pool: PoolState
    store: EmbeddingStore
    model: ClassifierModel | None
    per_iter_budget: int
    rng_seed: int

    def __post_init__(self) -> None:
        if self.per_iter_budget < 1:
            raise AcquisitionError("per-iteration budget must be >= 1")

    @property
    def take(self) -> int:
        return min(self.per_iter_budget, len(self.pool.unlabeled))


@dataclass(frozen=True)
class Provenance:
    stage: str
    target_class: int | None = None


@dataclass(frozen=True)
class SelectionResult:
    ids: tuple[int, ...]
    provenance: tuple[Provenance, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.provenance):
            raise AcquisitionError("ids and provenance must align")
        if len(set(self.ids)) != len(self.ids):
            raise AcquisitionError("selection contains duplicate ids")


@dataclass(frozen=True)
class MinorityAllocation:
    """Per-class labeling quotas below the mean labeled count.

    ``raw_quotas`` are the uncapped deficits (mean minus labeled count for
    minority classes, 0 otherwise); ``quotas`` are proportionally scaled down
    when the deficits sum past the iteration budget. Kept as exact rationals
    until integerized by largest-remainder rounding at selection time.
    """

    mu_k: Fraction
    quotas: tuple[Fraction, ...]
    raw_quotas: tuple[Fraction, ...]
    minority_flags: tuple[bool, ...]


def minority_allocation(pool: PoolState, per_iter_budget: int) -> MinorityAllocation:
    """Quota per class: its deficit below the mean labeled count, budget-capped."""
    if pool.n_labeled == 0:
        raise EmptyLabeledSetError("allocation needs a non-empty labeled set")
    counts = pool.per_class_counts
    mu = Fraction(int(counts.sum()), pool.n_classes)
    raw = tuple(
        mu - int(c) if int(c) < mu else Fraction(0)
        for c in counts
    )
    total = sum(raw)
    if total > per_iter_budget:
        scale = Fraction(per_iter_budget) / total
        quotas = tuple(q * scale for q in raw)
    else:
        quotas = raw
    return MinorityAllocation(
        mu_k=mu,
        quotas=quotas,
        raw_quotas=raw,
        minority_flags=tuple(int(c) < mu for c in counts),
    )


def largest_remainder_round(quotas: Sequence[Fraction], total: int) -> np.ndarray:
    """Integerize quotas to sum exactly to ``total``, ties to the lowest index."""
    floors = [int(q) for q in quotas]
    remainders = [q - f for q, f in zip(quotas, floors)]
    leftover = total - sum(floors)
    if leftover < 0:
        raise AcquisitionError(f"total {total} below the quota floor sum {sum(floors)}")
    order = sorted(range(len(quotas)), key=lambda i: (-remainders[i], i))
    out = np.asarray(floors, dtype=np.int64)
    for i in order[:leftover]:
        out[i] += 1
    return out


def integer_quotas(alloc: MinorityAllocation, budget: int) -> np.ndarray:
    """Largest-remainder integerization of the capped quotas."""
    total = sum(alloc.quotas)
    target = min(budget, int(total + Fraction(1, 2)))
    return largest_remainder_round(alloc.quotas, target)


def _selection_features(ctx: AcquisitionContext) -> np.ndarray:
    """Representation for distance-based picks: the active scheme's space."""
    if ctx.model is not None:
        return ctx.model.feature_space(ctx.store.vectors)
    return ctx.store.vectors.astype(np.float64)


def _min_dists(points: np.ndarray, anchors: np.ndarray, running: np.ndarray) -> np.ndarray:
    """Elementwise min of ``running`` and each point's distance to ``anchors``."""
    if anchors.shape[0] == 0:
        return running
    block = max(1, _DIST_BLOCK_ELEMS // max(1, points.shape[0] * points.shape[1]))
    for start in range(0, anchors.shape[0], block):
        chunk = anchors[start : start + block]
        d = np.sqrt(((points[:, None, :] - chunk[None, :, :]) ** 2).sum(axis=2))
        running = np.minimum(running, d.min(axis=1))
    return running


def greedy_k_center(
    candidates: Iterable[int],
    anchors: Iterable[int],
    count: int,
    store: EmbeddingStore,
    *,
    features: np.ndarray | None = None,
) -> list[int]:
    """Farthest-first traversal of the candidates away from the anchors.

    Repeatedly picks the candidate maximizing its minimum distance to the
    anchors plus everything picked so far; each pick immediately joins the
    anchor set. Distance ties break toward the lowest sample id. With no
    anchors the traversal starts from the lowest-id candidate.
    """
    cand = np.unique(np.fromiter((int(i) for i in candidates), dtype=np.int64))
    anch = np.unique(np.fromiter((int(i) for i in anchors), dtype=np.int64))
    if count > cand.shape[0]:
        raise AcquisitionError(f"cannot pick {count} from {cand.shape[0]} candidates")
    if count == 0:
        return []
    space = features if features is not None else store.vectors
    space = np.asarray(space, dtype=np.float64)
    points = space[cand]
    if anch.shape[0] > 0:
        min_dist = _min_dists(points, space[anch], np.full(cand.shape[0], np.inf))
    else:
        min_dist = np.full(cand.shape[0], np.inf)
    picked: list[int] = []
    for _ in range(count):
        j = 0 if not picked and anch.shape[0] == 0 else int(np.argmax(min_dist))
        picked.append(int(cand[j]))
        d = np.sqrt(((points - points[j]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, d)
        min_dist[j] = -1.0  # never re-pick, even among exact duplicates
    return picked


def _uniform(result_ids: Sequence[int], stage: str) -> SelectionResult:
    prov = tuple(Provenance(stage) for _ in result_ids)
    return SelectionResult(ids=tuple(int(i) for i in result_ids), provenance=prov)


def _random_pick(
    ctx: AcquisitionContext, exclude: frozenset[int], count: int
) -> np.ndarray:
    rng = substream(ctx.rng_seed, "af-random")
    avail = ctx.pool.unlabeled_sorted
    if exclude:
        avail = avail[~np.isin(avail, np.fromiter(exclude, dtype=np.int64))]
    return rng.choice(avail, size=count, replace=False)


def _margin_pick(
    ctx: AcquisitionContext, exclude: frozenset[int], count: int
) -> np.ndarray:
    if ctx.model is None:
        raise MissingModelError("margin sampling needs a trained model")
    avail = ctx.pool.unlabeled_sorted
    if exclude:
        avail = avail[~np.isin(avail, np.fromiter(exclude, dtype=np.int64))]
    probs = predict_proba(ctx.model, ctx.store, avail)
    _, _, margins = top2_margins(probs)
    order = np.lexsort((avail, margins))
    return avail[order[:count]]


def af_random(ctx: AcquisitionContext) -> SelectionResult:
    """Uniform selection without replacement."""
    return _uniform(_random_pick(ctx, frozenset(), ctx.take).tolist(), "random")


def af_margin(ctx: AcquisitionContext) -> SelectionResult:
    """The unlabeled samples with the smallest top-2 probability gap."""
    return _uniform(_margin_pick(ctx, frozenset(), ctx.take).tolist(), "margin")


def af_coreset(ctx: AcquisitionContext) -> SelectionResult:
    """Greedy k-center coverage of the unlabeled pool, anchored at the labels.

    Runs in the active scheme's representation: frozen embeddings for SVM
    schemes, hidden activations of the latest softmax model otherwise.
    """
    if ctx.pool.n_labeled == 0:
        raise EmptyLabeledSetError("coreset needs a non-empty labeled set")
    picks = greedy_k_center(
        ctx.pool.unlabeled_sorted,
        ctx.pool.labeled_ids,
        ctx.take,
        ctx.store,
        features=_selection_features(ctx),
    )
    return _uniform(picks, "coreset")


def af_cds_bal(ctx: AcquisitionContext) -> SelectionResult:
    """Prefer samples close to a minority-class centroid and far from majority ones.

    Scores each unlabeled sample by distance-to-nearest-minority-centroid
    minus distance-to-nearest-majority-centroid in the embedding space and
    keeps the lowest scores. Falls back to random selection when either group
    of centroids is empty (recorded in the provenance).
    """
    pool = ctx.pool
    if pool.n_labeled == 0:
        raise EmptyLabeledSetError("cds-bal needs a non-empty labeled set")
    counts = pool.per_class_counts
    mu = counts.sum() / pool.n_classes
    minority = [c for c in range(pool.n_classes) if counts[c] < mu and counts[c] > 0]
    majority = [c for c in range(pool.n_classes) if counts[c] >= mu and counts[c] > 0]
    if not minority or not majority:
        ids = _random_pick(ctx, frozenset(), ctx.take).tolist()
        return _uniform(ids, "fallback-random")
    space = ctx.store.vectors.astype(np.float64)
    unl = pool.unlabeled_sorted
    points = space[unl]

    def nearest(classes: list[int]) -> np.ndarray:
        centroids = np.stack([space[pool.labeled_ids_of_class(c)].mean(axis=0) for c in classes])
        return _min_dists(points, centroids, np.full(unl.shape[0], np.inf))

    score = nearest(minority) - nearest(majority)
    order = np.lexsort((unl, score))
    return _uniform(unl[order[: ctx.take]].tolist(), "cds-bal")


def _top1_partition(ctx: AcquisitionContext) -> dict[int, np.ndarray]:
    """Unlabeled ids keyed by the model's top-1 class (an exact partition)."""
    if ctx.model is None:
        raise MissingModelError("candidate sets need a trained model")
    unl = ctx.pool.unlabeled_sorted
    probs = predict_proba(ctx.model, ctx.store, unl)
    preds = np.argmax(probs, axis=1)
    return {c: unl[preds == c] for c in range(ctx.model.n_classes)}


def minority_candidates(ctx: AcquisitionContext, c: int) -> np.ndarray:
    """All unlabeled ids whose predicted top-1 class is ``c``."""
    return _top1_partition(ctx).get(c, np.empty(0, dtype=np.int64))


def select_within_class(
    variant: McsVariant,
    candidates: Iterable[int],
    quota: int,
    ctx: AcquisitionContext,
    c: int,
) -> list[int]:
    """Pick up to ``quota`` of the samples predicted as class ``c``.

    When the candidates fit inside the quota all variants return them all.
    Otherwise CMCS keeps the largest margins, UMCS the smallest, and DMCS
    runs greedy k-center anchored at the labeled samples of class ``c``.
    """
    if quota < 0:
        raise AcquisitionError("quota must be >= 0")
    cand = np.unique(np.fromiter((int(i) for i in candidates), dtype=np.int64))
    if cand.shape[0] <= quota:
        return cand.tolist()
    if variant is McsVariant.DMCS:
        return greedy_k_center(
            cand,
            ctx.pool.labeled_ids_of_class(c),
            quota,
            ctx.store,
            features=_selection_features(ctx),
        )
    if ctx.model is None:
        raise MissingModelError("margin-ordered selection needs a trained model")
    probs = predict_proba(ctx.model, ctx.store, cand)
    _, _, margins = top2_margins(probs)
    key = -margins if variant is McsVariant.CMCS else margins
    order = np.lexsort((cand, key))
    return cand[order[:quota]].tolist()


def af_mcs(
    variant: McsVariant, auxiliary: str, ctx: AcquisitionContext
) -> SelectionResult:
    """Minority-quota selection with an auxiliary fill for the rest.

    Minority classes are served in descending-quota order; whatever budget
    their candidate sets cannot absorb goes to the auxiliary function
    (``random`` or ``margin``) over the still-unselected unlabeled pool.
    """
    if auxiliary not in ("random", "margin"):
        raise UnknownAuxiliaryError(f"unknown auxiliary acquisition {auxiliary!r}")
    if ctx.model is None:
        raise MissingModelError("minority-class selection needs a trained model")
    take = ctx.take
    alloc = minority_allocation(ctx.pool, take)
    quotas = integer_quotas(alloc, take)
    partition = _top1_partition(ctx)
    ids: list[int] = []
    prov: list[Provenance] = []
    by_need = sorted(
        (c for c in range(ctx.pool.n_classes) if quotas[c] > 0),
        key=lambda c: (-quotas[c], c),
    )
    for c in by_need:
        chosen = select_within_class(
            variant, partition.get(c, np.empty(0, dtype=np.int64)), int(quotas[c]), ctx, c
        )
        ids.extend(chosen)
        prov.extend(Provenance("minority", c) for _ in chosen)
    remaining = take - len(ids)
    if remaining > 0:
        exclude = frozenset(ids)
        if auxiliary == "random":
            filler = _random_pick(ctx, exclude, remaining)
        else:
            filler = _margin_pick(ctx, exclude, remaining)
        ids.extend(int(i) for i in filler)
        prov.extend(Provenance(f"auxiliary-{auxiliary}") for _ in filler)
    return SelectionResult(ids=tuple(ids), provenance=tuple(prov))


def _mcs(variant: McsVariant, auxiliary: str) -> Callable[[AcquisitionContext], SelectionResult]:
    def run(ctx: AcquisitionContext) -> SelectionResult:
        return af_mcs(variant, auxiliary, ctx)

    return run


AF_TABLE: dict[str, Callable[[AcquisitionContext], SelectionResult]] = {
    "random": af_random,
    "margin": af_margin,
    "coreset": af_coreset,
    "cds-bal": af_cds_bal,
    "cmcs-rand": _mcs(McsVariant.CMCS, "random"),
    "cmcs-marg": _mcs(McsVariant.CMCS, "margin"),
    "umcs-rand": _mcs(McsVariant.UMCS, "random"),
    "umcs-marg": _mcs(McsVariant.UMCS, "margin"),
    "dmcs-rand": _mcs(McsVariant.DMCS, "random"),
    "dmcs-marg": _mcs(McsVariant.DMCS, "margin"),
}


def make_af(name: str) -> Callable[[AcquisitionContext], SelectionResult]:
    try:
        return AF_TABLE[name]
    except KeyError:
        raise AcquisitionError(
            f"unknown acquisition function {name!r}; expected one of {sorted(AF_TABLE)}"
        ) from None
