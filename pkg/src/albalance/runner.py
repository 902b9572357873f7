"""Orchestration of the iterative active-learning experiment.

One run: seed an initial random labeled set, then per iteration select a
batch with the configured acquisition function, label it against the oracle,
retrain the active scheme(s), cross-validate both schemes while the SVM
scheme is active, evaluate on the balanced test set and record the curves.
The switch from the SVM scheme to the softmax scheme is one-way: the first
iteration whose softmax cross-validation score strictly exceeds the SVM's
flips the active scheme for all following iterations.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import __version__
from .acquisition import AcquisitionContext, MissingModelError, af_random, make_af
from .classifiers import (
    ClassifierModel,
    DegenerateFoldError,
    Scheme,
    TrainingConfig,
    UntrainableError,
    cross_validate_scheme,
    evaluate_balanced,
    train_scheme,
)
from .dataset import EmbeddingStore, LabelOracle, PoolState, label_batch, seed_initial
from .imbalance import labeled_profile
from .rng import substream_seed

log = logging.getLogger(__name__)

THREADS_ENV = "ALBALANCE_THREADS"


class RunnerError(Exception):
    pass


class SchemePolicy(str, Enum):
    CS_SVM_ONLY = "cs_svm_only"
    SOFTMAX_TH_ONLY = "softmax_th_only"
    AUTO_SWITCH = "auto_switch"


@dataclass(frozen=True)
class RunConfig:
    budget: int
    iterations: int
    af_name: str
    scheme_policy: SchemePolicy = SchemePolicy.CS_SVM_ONLY
    seeds: tuple[int, ...] = (0,)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    normalize_embeddings: bool = True
    eval_reference: str = ""

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise RunnerError("iterations must be >= 1")
        if self.budget < self.iterations:
            raise RunnerError("budget must allow at least one sample per iteration")
        if not self.seeds:
            raise RunnerError("at least one seed is required")
        make_af(self.af_name)  # validate the name early

    def batch_sizes(self) -> list[int]:
        """Every iteration takes floor(b/t); the remainder goes to the last one."""
        base = self.budget // self.iterations
        sizes = [base] * self.iterations
        sizes[-1] += self.budget - base * self.iterations
        return sizes

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "iterations": self.iterations,
            "af_name": self.af_name,
            "scheme_policy": self.scheme_policy.value,
            "seeds": list(self.seeds),
            "training": asdict(self.training),
            "normalize_embeddings": self.normalize_embeddings,
            "eval_reference": self.eval_reference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            budget=d["budget"],
            iterations=d["iterations"],
            af_name=d["af_name"],
            scheme_policy=SchemePolicy(d["scheme_policy"]),
            seeds=tuple(d["seeds"]),
            training=TrainingConfig(**d["training"]),
            normalize_embeddings=d.get("normalize_embeddings", True),
            eval_reference=d.get("eval_reference", ""),
        )


@dataclass(frozen=True)
class SwitchState:
    active: Scheme = Scheme.CS_SVM
    switched: bool = False


def scheme_switch_decision(cv_svm: float, cv_softmax: float, state: SwitchState) -> SwitchState:
    """One-way flip to the softmax scheme when its CV score strictly wins."""
    if state.switched or not state.active.is_svm:
        return state
    if cv_softmax > cv_svm:
        return SwitchState(active=Scheme.SOFTMAX_TH, switched=True)
    return state


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    labeled_count: int
    accuracy: float
    ir: float
    scheme: str
    cv_svm: float | None
    cv_softmax: float | None
    switched: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunRecord:
    seed: int
    config: dict
    metadata: dict
    iterations: tuple[IterationRecord, ...]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "metadata": self.metadata,
            "iterations": [r.to_dict() for r in self.iterations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            seed=d["seed"],
            config=d["config"],
            metadata=d["metadata"],
            iterations=tuple(IterationRecord(**r) for r in d["iterations"]),
        )


def _train_one(
    scheme: Scheme,
    store: EmbeddingStore,
    pool: PoolState,
    oracle: LabelOracle,
    config: RunConfig,
    seed: int,
    iteration: int,
) -> ClassifierModel | None:
    try:
        return train_scheme(
            scheme,
            store,
            pool,
            oracle,
            config.training,
            substream_seed(seed, "sgd", iteration, scheme.value),
        )
    except UntrainableError as err:
        log.warning("iteration %d: %s untrainable (%s)", iteration, scheme.value, err)
        return None


def _cv_one(
    scheme: Scheme,
    store: EmbeddingStore,
    pool: PoolState,
    oracle: LabelOracle,
    config: RunConfig,
    seed: int,
    iteration: int,
) -> float:
    try:
        return cross_validate_scheme(
            store,
            pool,
            oracle,
            scheme,
            substream_seed(seed, "cv", iteration, scheme.value),
            config.training,
        )
    except (UntrainableError, DegenerateFoldError) as err:
        log.warning("iteration %d: %s CV degenerate, scoring 0 (%s)", iteration, scheme.value, err)
        return 0.0


def _run_single_seed(
    config: RunConfig,
    seed: int,
    store: EmbeddingStore,
    oracle: LabelOracle,
    test_store: EmbeddingStore,
    test_oracle: LabelOracle,
    metadata: dict,
) -> RunRecord:
    sizes = config.batch_sizes()
    af = make_af(config.af_name)
    pool = seed_initial(
        PoolState.empty(store.n_samples, oracle.n_classes), sizes[0], seed, oracle
    )
    if config.scheme_policy is SchemePolicy.SOFTMAX_TH_ONLY:
        state = SwitchState(active=Scheme.SOFTMAX_TH, switched=True)
    else:
        state = SwitchState(active=Scheme.CS_SVM, switched=False)
    current: ClassifierModel | None = None
    records: list[IterationRecord] = []

    for k in range(config.iterations):
        if k > 0:
            ctx = AcquisitionContext(
                pool=pool,
                store=store,
                model=current,
                per_iter_budget=sizes[k],
                rng_seed=substream_seed(seed, "af", k),
            )
            try:
                selection = af(ctx)
            except MissingModelError:
                log.warning(
                    "iteration %d: no trainable model yet, falling back to random selection", k
                )
                selection = af_random(ctx)
            pool = label_batch(pool, selection.ids, oracle).with_iteration(k)

        auto = config.scheme_policy is SchemePolicy.AUTO_SWITCH
        models: dict[Scheme, ClassifierModel | None] = {}
        cv_svm: float | None = None
        cv_softmax: float | None = None
        if auto and not state.switched:
            models[Scheme.CS_SVM] = _train_one(Scheme.CS_SVM, store, pool, oracle, config, seed, k)
            models[Scheme.SOFTMAX_TH] = _train_one(
                Scheme.SOFTMAX_TH, store, pool, oracle, config, seed, k
            )
            cv_svm = _cv_one(Scheme.CS_SVM, store, pool, oracle, config, seed, k)
            cv_softmax = _cv_one(Scheme.SOFTMAX_TH, store, pool, oracle, config, seed, k)
        else:
            models[state.active] = _train_one(state.active, store, pool, oracle, config, seed, k)

        active_model = models.get(state.active)
        accuracy = (
            evaluate_balanced(active_model, test_store, test_oracle)
            if active_model is not None
            else 0.0
        )
        switched_now = False
        new_state = state
        if auto and not state.switched:
            new_state = scheme_switch_decision(cv_svm, cv_softmax, state)
            switched_now = new_state.switched
        records.append(
            IterationRecord(
                iteration=k,
                labeled_count=pool.n_labeled,
                accuracy=accuracy,
                ir=labeled_profile(pool).ir,
                scheme=state.active.value,
                cv_svm=cv_svm,
                cv_softmax=cv_softmax,
                switched=switched_now,
            )
        )
        state = new_state
        current = models.get(state.active)

    return RunRecord(
        seed=seed, config=config.to_dict(), metadata=metadata, iterations=tuple(records)
    )


def run_experiment(
    config: RunConfig,
    store: EmbeddingStore,
    oracle: LabelOracle,
    test_store: EmbeddingStore,
    test_oracle: LabelOracle,
) -> list[RunRecord]:
    """Run the full AL schedule once per seed and return the per-seed records."""
    if config.budget > store.n_samples:
        raise RunnerError(
            f"budget {config.budget} exceeds the pool size {store.n_samples}"
        )
    test_counts = test_oracle.class_counts()
    if test_counts.min() != test_counts.max():
        warnings.warn(
            "test set is not balanced; per-class accuracies will be averaged anyway",
            stacklevel=2,
        )
    metadata = {
        "version": __version__,
        "normalized_embeddings": store.normalized,
        "class_names": list(oracle.class_names),
        "notes": [
            "trainable scheme realized as a hidden-layer softmax head over frozen embeddings",
            "imbalance induction uses a seeded geometric-decay profile",
        ],
    }
    workers = int(os.environ.get(THREADS_ENV, "1") or "1")
    args = [
        (config, seed, store, oracle, test_store, test_oracle, metadata)
        for seed in config.seeds
    ]
    if workers > 1 and len(args) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            return list(pool_exec.map(lambda a: _run_single_seed(*a), args))
    return [_run_single_seed(*a) for a in args]


@dataclass(frozen=True)
class AggregateCurves:
    iterations: tuple[int, ...]
    labeled_counts: tuple[int, ...]
    acc_mean: tuple[float, ...]
    acc_std: tuple[float, ...]
    ir_mean: tuple[float, ...]
    ir_std: tuple[float, ...]
    schemes: tuple[str, ...]


def aggregate_runs(records: list[RunRecord]) -> AggregateCurves:
    """Per-iteration mean and population std of accuracy and ir across seeds."""
    if not records:
        raise RunnerError("no records to aggregate")
    t = len(records[0].iterations)
    if any(len(r.iterations) != t for r in records):
        raise RunnerError("records disagree on the number of iterations")
    acc = np.array([[it.accuracy for it in r.iterations] for r in records])
    ir = np.array([[it.ir for it in r.iterations] for r in records])
    schemes = []
    for k in range(t):
        per_seed = {r.iterations[k].scheme for r in records}
        schemes.append(per_seed.pop() if len(per_seed) == 1 else "mixed")
    return AggregateCurves(
        iterations=tuple(range(t)),
        labeled_counts=tuple(it.labeled_count for it in records[0].iterations),
        acc_mean=tuple(float(x) for x in acc.mean(axis=0)),
        acc_std=tuple(float(x) for x in acc.std(axis=0)),
        ir_mean=tuple(float(x) for x in ir.mean(axis=0)),
        ir_std=tuple(float(x) for x in ir.std(axis=0)),
        schemes=tuple(schemes),
    )
