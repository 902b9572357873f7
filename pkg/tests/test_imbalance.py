"""Imbalance ratio, induction and labeled-pool profiles."""

from __future__ import annotations

import numpy as np
import pytest

from albalance.dataset import PoolState, seed_initial
from albalance.imbalance import (
    ImbalanceError,
    InductionSpec,
    InfeasibleTargetError,
    imbalance_ratio,
    induce_imbalance,
    labeled_profile,
    prune_dataset,
)
from albalance.synth import blob_centers, sample_blobs

from conftest import make_counts


class TestImbalanceRatio:
    @pytest.mark.parametrize(
        "n,total,golden",
        [(101, 22956, 0.793), (100, 17168, 0.740), (67, 14281, 0.789)],
    )
    def test_reference_dataset_shapes(self, n, total, golden):
        counts = make_counts(n, total, golden)
        assert abs(imbalance_ratio(counts).ir - golden) <= 1e-3

    def test_uniform_counts(self):
        assert imbalance_ratio([50, 50, 50]).ir == 0.0

    def test_hand_computed(self):
        stats = imbalance_ratio([30, 10])
        assert stats.mean == 20.0 and stats.std == 10.0 and stats.ir == 0.5

    def test_errors(self):
        with pytest.raises(ImbalanceError):
            imbalance_ratio([])
        with pytest.raises(ImbalanceError):
            imbalance_ratio([0, 0])
        with pytest.raises(ImbalanceError):
            imbalance_ratio([3, -1])

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        counts = rng.integers(1, 200, size=37)
        base = imbalance_ratio(counts).ir
        for k in (2, 4, 8):  # power-of-two scaling is exact in binary floats
            assert imbalance_ratio(counts * k).ir == base
        for k in (3, 7, 11):
            assert imbalance_ratio(counts * k).ir == pytest.approx(base, rel=1e-12)


class TestInduceImbalance:
    def test_uniform_pool_to_target(self):
        spec = InductionSpec(target_ir=0.74, min_per_class=25, rng_seed=7)
        out = induce_imbalance([500] * 100, spec)
        achieved = imbalance_ratio(out).ir
        assert 0.73 <= achieved <= 0.75
        assert (out <= 500).all() and (out >= 25).all()

    def test_identity_on_uniform_zero_target(self):
        out = induce_imbalance([50, 50, 50], InductionSpec(0.0, 1, 1))
        assert list(out) == [50, 50, 50]

    def test_infeasible_when_floor_equals_size(self):
        with pytest.raises(InfeasibleTargetError):
            induce_imbalance([30, 30], InductionSpec(5.0, 30, 1))

    def test_floor_above_smallest_class(self):
        with pytest.raises(InfeasibleTargetError):
            induce_imbalance([100, 10], InductionSpec(0.5, 20, 1))

    def test_deterministic_per_seed(self):
        spec = InductionSpec(0.6, 10, 13)
        a = induce_imbalance([300] * 30, spec)
        b = induce_imbalance([300] * 30, spec)
        assert np.array_equal(a, b)
        c = induce_imbalance([300] * 30, InductionSpec(0.6, 10, 14))
        assert not np.array_equal(a, c)

    def test_monotone_destructive(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            counts = rng.integers(50, 400, size=25)
            out = induce_imbalance(counts, InductionSpec(0.7, 5, trial))
            assert (out <= counts).all()
            assert (out >= 5).all()
            assert abs(imbalance_ratio(out).ir - 0.7) <= 0.01


class TestPruneDataset:
    def test_full_counts_identity(self):
        centers = blob_centers(3, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [5, 4, 3], 1.0, 2)
        new_store, new_oracle = prune_dataset(store, oracle, [5, 4, 3], 0)
        assert np.array_equal(new_store.vectors, store.vectors)
        assert np.array_equal(new_oracle.labels, oracle.labels)

    def test_minimal_counts(self):
        centers = blob_centers(2, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [6, 6], 1.0, 2)
        new_store, new_oracle = prune_dataset(store, oracle, [1, 1], 0)
        assert new_store.n_samples == 2
        assert sorted(new_oracle.labels.tolist()) == [0, 1]

    def test_requested_counts_exact(self):
        centers = blob_centers(100, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [50] * 100, 1.0, 2)
        target = induce_imbalance([50] * 100, InductionSpec(0.74, 5, 3))
        new_store, new_oracle = prune_dataset(store, oracle, target, 4)
        recount = new_oracle.class_counts()
        assert np.array_equal(recount, target)
        assert new_store.n_samples == int(target.sum())

    def test_exceeding_availability(self):
        centers = blob_centers(2, 4, 5.0, 1)
        store, oracle = sample_blobs(centers, [3, 3], 1.0, 2)
        with pytest.raises(ImbalanceError):
            prune_dataset(store, oracle, [4, 3], 0)


class TestLabeledProfile:
    def test_balanced_zero(self):
        pool = PoolState(
            n_samples=20, n_classes=2,
            labeled_ids=tuple(range(20)),
            labeled_classes=tuple([0] * 10 + [1] * 10),
        )
        assert labeled_profile(pool).ir == 0.0

    def test_hand_arithmetic(self):
        pool = PoolState(
            n_samples=40, n_classes=2,
            labeled_ids=tuple(range(40)),
            labeled_classes=tuple([0] * 30 + [1] * 10),
        )
        assert labeled_profile(pool).ir == 0.5

    def test_empty_labeled(self):
        with pytest.raises(ImbalanceError):
            labeled_profile(PoolState.empty(5, 2))

    def test_random_sampling_tracks_source_ir(self):
        counts = induce_imbalance([120] * 25, InductionSpec(0.74, 8, 3))
        source_ir = imbalance_ratio(counts).ir
        centers = blob_centers(25, 6, 5.0, 1)
        store, oracle = sample_blobs(centers, counts, 1.0, 2)
        profiles = []
        for seed in range(5):
            pool = seed_initial(
                PoolState.empty(store.n_samples, 25), 400, seed, oracle
            )
            profiles.append(labeled_profile(pool).ir)
        assert abs(float(np.mean(profiles)) - source_ir) <= 0.15
