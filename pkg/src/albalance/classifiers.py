"""Per-iteration training schemes over frozen embeddings.

Two schemes are trained during active learning:

* ``CS_SVM``: one-vs-rest linear SVMs minimizing an L2-regularized hinge loss
  whose per-sample terms are weighted by inverse class frequency, trained by
  seeded mini-batch SGD.
* ``SOFTMAX_TH``: a one-hidden-layer softmax head trained with cross-entropy,
  whose predicted probabilities are rectified at inference time by the
  training-set class priors (divide by smoothed priors, renormalize).

``SVM_PLAIN`` and ``SOFTMAX_PLAIN`` are the unweighted / unrectified
counterparts used for ablation runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .dataset import EmbeddingStore, LabelOracle, PoolState, UnknownSampleError
from .rng import substream, substream_seed


class ClassifierError(Exception):
    pass


class UntrainableError(ClassifierError):
    """Too few classes or samples in the labeled set to fit the scheme."""


class DivergenceError(ClassifierError):
    """Training loss became non-finite."""


class DegenerateFoldError(ClassifierError):
    """The cross-validation fold does not contain two evaluable classes."""


class MissingClassError(ClassifierError):
    """A class required for balanced evaluation is absent from the test set."""


class Scheme(str, Enum):
    CS_SVM = "cs_svm"
    SVM_PLAIN = "svm_plain"
    SOFTMAX_TH = "softmax_th"
    SOFTMAX_PLAIN = "softmax_plain"

    @property
    def is_svm(self) -> bool:
        return self in (Scheme.CS_SVM, Scheme.SVM_PLAIN)


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters shared by both schemes.

    Defaults mirror the softmax head's schedule: 60 epochs, initial learning
    rate 0.01, batch size 32, rate scaled by ``lr_decay`` when the epoch loss
    plateaus for ``plateau_patience`` epochs.
    """

    epochs: int = 60
    learning_rate: float = 0.01
    batch_size: int = 32
    l2: float = 1e-4
    hidden_width: int = 256
    plateau_patience: int = 10
    lr_decay: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.hidden_width < 0:
            raise ValueError("hidden_width must be >= 0")


@dataclass(frozen=True)
class ClassWeights:
    """Per-class positive loss multipliers; uniform weights = unweighted loss."""

    weights: np.ndarray
    flagged_empty: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or (w <= 0).any():
            raise ClassifierError("class weights must be a 1-D vector of positive reals")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassWeights":
        return cls(weights=np.ones(n_classes))


def class_weights_balanced(per_class_counts) -> ClassWeights:
    """Inverse-frequency weights: s / (n_eff * s_c) for non-empty classes.

    ``s`` is the labeled total and ``n_eff`` the number of non-empty classes,
    so majority classes get weight < 1 and minority classes > 1. Classes with
    zero labeled samples get weight 1 and are flagged.
    """
    counts = np.asarray(per_class_counts, dtype=np.int64)
    if counts.sum() == 0:
        raise ClassifierError("cannot derive class weights from an all-empty count vector")
    s = counts.sum()
    nonzero = counts > 0
    n_eff = int(nonzero.sum())
    weights = np.ones(counts.shape[0], dtype=np.float64)
    weights[nonzero] = s / (n_eff * counts[nonzero].astype(np.float64))
    return ClassWeights(weights=weights, flagged_empty=tuple(np.flatnonzero(~nonzero)))


@dataclass(frozen=True)
class TrainingMeta:
    epochs: int
    seed: int
    final_loss: float
    first_epoch_loss: float
    excluded_classes: tuple[int, ...] = ()


@dataclass(frozen=True)
class ClassifierModel:
    """Trained head exposing per-sample class-probability vectors.

    ``weight``/``bias`` are the final linear layer over the trained classes
    (rows of ``weight`` are per-class weight vectors). ``hidden_weight`` and
    ``hidden_bias`` are present only for softmax schemes with a hidden layer.
    ``classes`` lists the original class indices seen at training time;
    classes absent from the labeled set are excluded and get probability 0.
    """

    scheme: Scheme
    weight: np.ndarray
    bias: np.ndarray
    classes: np.ndarray
    n_classes: int
    class_priors: np.ndarray
    meta: TrainingMeta
    hidden_weight: np.ndarray | None = None
    hidden_bias: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.hidden_weight.shape[0] if self.hidden_weight is not None else self.weight.shape[1]

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        """Per-class scores (n, len(classes)) in trained-class order."""
        h = self.feature_space(x)
        return h @ self.weight.T + self.bias

    def feature_space(self, x: np.ndarray) -> np.ndarray:
        """The representation the scheme exposes for distance-based selection.

        Frozen embeddings for SVM schemes (and for a width-0 softmax head,
        which is affine); hidden-layer activations otherwise.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.hidden_weight is None:
            return x
        return np.maximum(x @ self.hidden_weight + self.hidden_bias, 0.0)


def svm_objective(
    weight: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y_sign: np.ndarray,
    sample_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted one-vs-rest hinge objective and its gradient.

    loss = l2/2 * ||W||_F^2 + mean_i sw_i * sum_c max(0, 1 - Y_ic * score_ic)
    """
    n = x.shape[0]
    scores = x @ weight.T + bias
    slack = 1.0 - y_sign * scores
    active = slack > 0.0
    hinge = np.where(active, slack, 0.0)
    loss = 0.5 * l2 * float((weight**2).sum()) + float((sample_weights * hinge.sum(axis=1)).mean())
    coef = sample_weights[:, None] * y_sign * active
    grad_w = l2 * weight - coef.T @ x / n
    grad_b = -coef.sum(axis=0) / n
    return loss, grad_w, grad_b


def mlp_objective(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    y_local: np.ndarray,
    l2: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy objective of the softmax head and its gradient.

    ``params`` holds w_out/b_out and, when a hidden layer is present,
    w_hidden/b_hidden. Biases are not regularized.
    """
    n = x.shape[0]
    w_out, b_out = params["w_out"], params["b_out"]
    hidden = "w_hidden" in params
    if hidden:
        pre = x @ params["w_hidden"] + params["b_hidden"]
        h = np.maximum(pre, 0.0)
    else:
        h = x
    logits = h @ w_out + b_out
    logits = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    nll = -np.log(probs[np.arange(n), y_local])
    reg = float((w_out**2).sum())
    if hidden:
        reg += float((params["w_hidden"] ** 2).sum())
    loss = float(nll.mean()) + 0.5 * l2 * reg
    delta = probs
    delta[np.arange(n), y_local] -= 1.0
    delta /= n
    grads = {"w_out": h.T @ delta + l2 * w_out, "b_out": delta.sum(axis=0)}
    if hidden:
        dh = (delta @ w_out.T) * (pre > 0.0)
        grads["w_hidden"] = x.T @ dh + l2 * params["w_hidden"]
        grads["b_hidden"] = dh.sum(axis=0)
    return loss, grads


def _labeled_arrays(
    store: EmbeddingStore, pool: PoolState
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.asarray(pool.labeled_ids, dtype=np.int64)
    y = np.asarray(pool.labeled_classes, dtype=np.int64)
    classes = np.unique(y)
    if classes.shape[0] < 2:
        raise UntrainableError(
            f"need at least 2 labeled classes to train, got {classes.shape[0]}"
        )
    x = store.vectors[ids].astype(np.float64)
    return x, y, classes


def _smoothed_priors(y_local: np.ndarray, n_trained: int) -> np.ndarray:
    counts = np.bincount(y_local, minlength=n_trained).astype(np.float64)
    priors = counts + 1.0
    return priors / priors.sum()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


class _PlateauSchedule:
    """Multiplies the rate by ``decay`` after ``patience`` epochs w/o improvement."""

    def __init__(self, lr: float, patience: int, decay: float) -> None:
        self.lr = lr
        self.patience = patience
        self.decay = decay
        self.best = math.inf
        self.stale = 0

    def step(self, loss: float) -> None:
        if loss < self.best - 1e-12:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.decay
                self.stale = 0


def train_cs_svm(
    store: EmbeddingStore,
    pool: PoolState,
    oracle: LabelOracle,
    weights: ClassWeights,
    config: TrainingConfig,
    *,
    seed: int = 0,
    scheme: Scheme = Scheme.CS_SVM,
) -> ClassifierModel:
    """Fit one-vs-rest linear SVMs by seeded mini-batch SGD.

    Per-sample hinge terms are scaled by the class weight of the sample's
    true class; the weight vector is normalized to mean 1 over the training
    set, so uniformly scaled weights leave the optimization unchanged.
    All one-vs-rest problems share the batch schedule, which keeps training
    equivariant under class relabeling (the final layer starts at zero).
    """
    if not scheme.is_svm:
        raise ClassifierError(f"not an SVM scheme: {scheme}")
    x, y, classes = _labeled_arrays(store, pool)
    n, d = x.shape
    local = np.searchsorted(classes, y)
    n_trained = classes.shape[0]
    y_sign = np.where(local[:, None] == np.arange(n_trained)[None, :], 1.0, -1.0)
    sw = weights.weights[y].astype(np.float64)
    sw = sw * (n / sw.sum())

    w = np.zeros((n_trained, d))
    b = np.zeros(n_trained)
    rng = substream(seed, "sgd", scheme.value)
    schedule = _PlateauSchedule(config.learning_rate, config.plateau_patience, config.lr_decay)
    first_loss = math.inf
    loss = math.inf
    for epoch in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            _, gw, gb = svm_objective(w, b, x[idx], y_sign[idx], sw[idx], config.l2)
            w -= schedule.lr * gw
            b -= schedule.lr * gb
        loss, _, _ = svm_objective(w, b, x, y_sign, sw, config.l2)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"non-finite hinge loss at epoch {epoch}; lower learning_rate "
                f"(currently {config.learning_rate})"
            )
        if epoch == 0:
            first_loss = loss
        schedule.step(loss)

    return ClassifierModel(
        scheme=scheme,
        weight=w,
        bias=b,
        classes=classes,
        n_classes=oracle.n_classes,
        class_priors=_smoothed_priors(local, n_trained),
        meta=TrainingMeta(
            epochs=config.epochs,
            seed=seed,
            final_loss=loss,
            first_epoch_loss=first_loss,
            excluded_classes=tuple(sorted(set(range(oracle.n_classes)) - set(classes.tolist()))),
        ),
    )


def train_softmax_th(
    store: EmbeddingStore,
    pool: PoolState,
    oracle: LabelOracle,
    config: TrainingConfig,
    *,
    seed: int = 0,
    scheme: Scheme = Scheme.SOFTMAX_TH,
) -> ClassifierModel:
    """Fit the one-hidden-layer softmax head by seeded mini-batch SGD.

    ``hidden_width`` 0 degenerates to multinomial logistic regression. Class
    priors are stored from the labeled counts with +1 smoothing; rectification
    happens at prediction time for the ``SOFTMAX_TH`` scheme.
    """
    if scheme.is_svm:
        raise ClassifierError(f"not a softmax scheme: {scheme}")
    x, y, classes = _labeled_arrays(store, pool)
    n, d = x.shape
    local = np.searchsorted(classes, y)
    n_trained = classes.shape[0]
    width = config.hidden_width

    rng = substream(seed, "sgd", scheme.value)
    params: dict[str, np.ndarray] = {}
    if width > 0:
        params["w_hidden"] = rng.normal(0.0, math.sqrt(2.0 / d), size=(d, width))
        params["b_hidden"] = np.zeros(width)
        params["w_out"] = np.zeros((width, n_trained))
    else:
        params["w_out"] = np.zeros((d, n_trained))
    params["b_out"] = np.zeros(n_trained)

    schedule = _PlateauSchedule(config.learning_rate, config.plateau_patience, config.lr_decay)
    first_loss = math.inf
    loss = math.inf
    for epoch in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            _, grads = mlp_objective(params, x[idx], local[idx], config.l2)
            for key, grad in grads.items():
                params[key] -= schedule.lr * grad
        loss, _ = mlp_objective(params, x, local, config.l2)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"non-finite cross-entropy at epoch {epoch}; lower learning_rate "
                f"(currently {config.learning_rate})"
            )
        if epoch == 0:
            first_loss = loss
        schedule.step(loss)

    return ClassifierModel(
        scheme=scheme,
        weight=params["w_out"].T,
        bias=params["b_out"],
        classes=classes,
        n_classes=oracle.n_classes,
        class_priors=_smoothed_priors(local, n_trained),
        meta=TrainingMeta(
            epochs=config.epochs,
            seed=seed,
            final_loss=loss,
            first_epoch_loss=first_loss,
            excluded_classes=tuple(sorted(set(range(oracle.n_classes)) - set(classes.tolist()))),
        ),
        hidden_weight=params.get("w_hidden"),
        hidden_bias=params.get("b_hidden"),
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(
    model: ClassifierModel, store: EmbeddingStore, ids: Sequence[int]
) -> np.ndarray:
    """Normalized class-probability vectors, one row per id.

    SVM schemes map decision values through a softmax (temperature 1). The
    ``SOFTMAX_TH`` scheme divides probabilities by the stored class priors
    and renormalizes. Classes excluded at training time get probability 0.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros((0, model.n_classes))
    if ids.min() < 0 or ids.max() >= store.n_samples:
        raise UnknownSampleError("prediction ids outside the sample range")
    x = store.vectors[ids].astype(np.float64)
    probs = _softmax(model.decision_values(x))
    if model.scheme is Scheme.SOFTMAX_TH:
        probs = probs / model.class_priors
        probs = probs / probs.sum(axis=1, keepdims=True)
    if model.classes.shape[0] == model.n_classes:
        return probs
    full = np.zeros((ids.shape[0], model.n_classes))
    full[:, model.classes] = probs
    return full


def top2_margins(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-2 class indices and their probability gap, ties to the lowest index."""
    if probs.shape[1] < 2:
        raise ClassifierError("top-2 margins need at least 2 classes")
    order = np.argsort(-probs, axis=1, kind="stable")
    c1 = order[:, 0]
    c2 = order[:, 1]
    rows = np.arange(probs.shape[0])
    return c1, c2, probs[rows, c1] - probs[rows, c2]


def predict_top2(
    model: ClassifierModel, store: EmbeddingStore, ids: Sequence[int]
) -> list[tuple[int, int, float]]:
    """Top-2 predicted classes and margin for each id."""
    if model.n_classes < 2:
        raise ClassifierError("top-2 prediction requires a multi-class model")
    probs = predict_proba(model, store, ids)
    c1, c2, margin = top2_margins(probs)
    return [(int(a), int(b), float(m)) for a, b, m in zip(c1, c2, margin)]


def predict_labels(model: ClassifierModel, store: EmbeddingStore, ids: Sequence[int]) -> np.ndarray:
    """Argmax class per id, ties to the lowest class index."""
    probs = predict_proba(model, store, ids)
    return np.argmax(probs, axis=1)


def evaluate_balanced(
    model: ClassifierModel, store: EmbeddingStore, oracle: LabelOracle
) -> float:
    """Mean of per-class accuracies over all oracle classes."""
    ids = np.arange(store.n_samples)
    preds = predict_labels(model, store, ids)
    labels = oracle.labels
    accs = []
    for c in range(oracle.n_classes):
        mask = labels == c
        if not mask.any():
            raise MissingClassError(f"class {c} has no test samples")
        accs.append(float((preds[mask] == c).mean()))
    return float(np.mean(accs))


def train_scheme(
    scheme: Scheme,
    store: EmbeddingStore,
    pool: PoolState,
    oracle: LabelOracle,
    config: TrainingConfig,
    seed: int,
) -> ClassifierModel:
    """Train any scheme by name; CS_SVM derives balanced weights from the pool."""
    if scheme.is_svm:
        if scheme is Scheme.CS_SVM:
            weights = class_weights_balanced(pool.per_class_counts)
        else:
            weights = ClassWeights.uniform(pool.n_classes)
        return train_cs_svm(store, pool, oracle, weights, config, seed=seed, scheme=scheme)
    return train_softmax_th(store, pool, oracle, config, seed=seed, scheme=scheme)


def cross_validate_scheme(
    store: EmbeddingStore,
    pool: PoolState,
    oracle: LabelOracle,
    scheme: Scheme,
    seed: int,
    config: TrainingConfig,
) -> float:
    """Stratified 80:20 score of one scheme on the current labeled set.

    Trains on 80% of the labeled samples (per-class split) and returns the
    mean per-class accuracy over classes present in the held-out 20%.
    """
    rng = substream(seed, "cv")
    train_ids: list[int] = []
    train_classes: list[int] = []
    fold_ids: list[int] = []
    fold_classes: list[int] = []
    for c in range(pool.n_classes):
        ids_c = pool.labeled_ids_of_class(c)
        if ids_c.size == 0:
            continue
        shuffled = rng.permutation(ids_c)
        n_hold = ids_c.size // 5
        fold_ids.extend(int(i) for i in shuffled[:n_hold])
        fold_classes.extend([c] * n_hold)
        train_ids.extend(int(i) for i in shuffled[n_hold:])
        train_classes.extend([c] * (ids_c.size - n_hold))
    if len(set(fold_classes)) < 2:
        raise DegenerateFoldError(
            "held-out fold must contain at least one sample of at least two classes"
        )
    sub_pool = PoolState(
        n_samples=pool.n_samples,
        n_classes=pool.n_classes,
        labeled_ids=tuple(train_ids),
        labeled_classes=tuple(train_classes),
    )
    model = train_scheme(
        scheme, store, sub_pool, oracle, config, substream_seed(seed, "cv", "train")
    )
    preds = predict_labels(model, store, fold_ids)
    truth = np.asarray(fold_classes)
    accs = [float((preds[truth == c] == c).mean()) for c in sorted(set(fold_classes))]
    return float(np.mean(accs))
