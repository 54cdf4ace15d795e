"""
Baseline classifiers compared against the forest

Two single CART trees (a significance-gated ``partylike`` tree and a plain
``rpartlike`` tree), a one-vs-rest linear SVM and multinomial logistic
regression. The linear models train by gradient descent on standardized
features.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax
from scipy.stats import chi2, chi2_contingency

from data_model import CLASS_ORDER, N_CLASSES, DomainError, LabeledDataset, TurnoverClass
from forest import SCHEMA_VERSION, DecisionTree, Split, TreeParams, train_tree
from seeding import make_rng, validate_seed

logger = logging.getLogger(__name__)

LINEAR_KINDS = ("multinomial_logistic", "svm_ovr")
TREE_VARIANTS = ("partylike", "rpartlike")
PARTY_ALPHA = 0.05
RPART_MIN_LEAF = 5
MAX_HALVINGS = 40


class TrainingError(RuntimeError):
    """Training produced a non-finite objective."""

    def __init__(self, model: str, epoch: int):
        self.model = model
        self.epoch = epoch
        super().__init__(f"{model} diverged at epoch {epoch} (non-finite loss)")


@dataclass(frozen=True)
class GdConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    l2: float = 1e-4
    batch: Union[str, int] = "full"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise DomainError(f"epochs must be at least 1, got {self.epochs}")
        if self.l2 < 0:
            raise DomainError(f"l2 must be non-negative, got {self.l2}")
        if self.batch != "full" and (not isinstance(self.batch, int) or self.batch < 1):
            raise DomainError(f"batch must be 'full' or a positive size, got {self.batch!r}")
        validate_seed(self.seed)


@dataclass
class LinearModel:
    """K × (F+1) weights, the last column being the bias."""

    weights: np.ndarray
    feature_means: np.ndarray
    feature_stddevs: np.ndarray
    kind: str
    feature_names: Tuple[str, ...] = ()
    classes_present: Tuple[bool, ...] = (True,) * N_CLASSES
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in LINEAR_KINDS:
            raise DomainError(f"unknown linear model kind {self.kind!r}")
        if not np.all(np.isfinite(self.weights)):
            raise DomainError("linear model weights must be finite")
        if np.any(self.feature_stddevs <= 0):
            raise DomainError("standardization stddevs must be positive")


def standardization(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Column means and stddevs; constant columns get stddev 1."""
    means = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    stds = X.std(axis=0) if X.shape[0] else np.ones(X.shape[1])
    stds = np.where(stds > 0, stds, 1.0)
    return means, stds


def _design(X: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    Z = (X - means) / stds
    return np.hstack([Z, np.ones((Z.shape[0], 1))])


def softmax_loss_and_grad(W: np.ndarray, Xb: np.ndarray, y: np.ndarray, l2: float) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy + (l2/2)·‖W‖² and its gradient."""
    n = Xb.shape[0]
    scores = Xb @ W.T
    loss = float(np.mean(logsumexp(scores, axis=1) - scores[np.arange(n), y])) + 0.5 * l2 * float(np.sum(W * W))
    residual = softmax(scores, axis=1)
    residual[np.arange(n), y] -= 1.0
    grad = residual.T @ Xb / n + l2 * W
    return loss, grad


def hinge_objective_and_subgrad(
    W: np.ndarray, Xb: np.ndarray, Y: np.ndarray, l2: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-class one-vs-rest objective (l2/2)·‖w_k‖² + mean hinge, and its
    subgradient. ``Y`` holds ±1 targets, one column per class.
    """
    n = Xb.shape[0]
    margins = Y * (Xb @ W.T)
    slack = np.maximum(0.0, 1.0 - margins)
    objective = 0.5 * l2 * np.sum(W * W, axis=1) + slack.mean(axis=0)
    active = (margins < 1.0).astype(np.float64)
    grad = l2 * W - (Y * active).T @ Xb / n
    return objective, grad


def _check_classes(d: LabeledDataset, model: str) -> None:
    if d.n_rows == 0:
        raise DomainError(f"{model} needs training rows")
    if len(set(d.labels.tolist())) < 2:
        logger.warning("%s trained on a single class", model)


def _batches(n: int, batch: Union[str, int], rng: np.random.Generator) -> List[np.ndarray]:
    if batch == "full" or batch >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def train_multinomial_logreg(d: LabeledDataset, cfg: GdConfig = GdConfig()) -> LinearModel:
    """
    Gradient descent on mean softmax cross-entropy with L2 penalty.

    Full-batch steps are halved until the loss does not increase, so the
    recorded loss history is non-increasing.
    """
    _check_classes(d, "multinomial_logistic")
    X = np.asarray(d.rows)
    means, stds = standardization(X)
    Xb = _design(X, means, stds)
    y = d.labels
    W = np.zeros((N_CLASSES, Xb.shape[1]))
    rng = make_rng(cfg.seed, "gd", "multinomial_logistic")

    loss, grad = softmax_loss_and_grad(W, Xb, y, cfg.l2)
    history = [loss]
    rate = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        if cfg.batch == "full":
            for _ in range(MAX_HALVINGS):
                candidate = W - rate * grad
                new_loss, new_grad = softmax_loss_and_grad(candidate, Xb, y, cfg.l2)
                if not math.isfinite(new_loss):
                    raise TrainingError("multinomial_logistic", epoch)
                if new_loss <= loss:
                    break
                rate /= 2.0
            else:
                logger.info("multinomial_logistic stalled at epoch %d", epoch)
                break
            W, loss, grad = candidate, new_loss, new_grad
        else:
            for batch in _batches(Xb.shape[0], cfg.batch, rng):
                _, batch_grad = softmax_loss_and_grad(W, Xb[batch], y[batch], cfg.l2)
                W = W - rate * batch_grad
            loss, grad = softmax_loss_and_grad(W, Xb, y, cfg.l2)
            if not math.isfinite(loss):
                raise TrainingError("multinomial_logistic", epoch)
        history.append(loss)

    constant = np.flatnonzero(X.std(axis=0) == 0) if X.shape[0] else np.arange(0)
    W[:, constant] = 0.0
    return LinearModel(W, means, stds, "multinomial_logistic", d.feature_names, loss_history=history)


def train_svm_ovr(d: LabeledDataset, cfg: GdConfig = GdConfig()) -> LinearModel:
    """
    K one-vs-rest linear SVMs by subgradient descent with step
    ``learning_rate / sqrt(epoch)``; each class keeps its best iterate.
    A class with no training rows becomes a constant −1 scorer.
    """
    _check_classes(d, "svm_ovr")
    X = np.asarray(d.rows)
    means, stds = standardization(X)
    Xb = _design(X, means, stds)
    present = np.bincount(d.labels, minlength=N_CLASSES) > 0
    Y = np.where(np.eye(N_CLASSES)[d.labels] > 0, 1.0, -1.0)
    W = np.zeros((N_CLASSES, Xb.shape[1]))
    rng = make_rng(cfg.seed, "gd", "svm_ovr")

    objective, grad = hinge_objective_and_subgrad(W, Xb, Y, cfg.l2)
    best_W, best_objective = W.copy(), objective.copy()
    history = [float(objective.sum())]
    for epoch in range(1, cfg.epochs + 1):
        step = cfg.learning_rate / math.sqrt(epoch)
        if cfg.batch == "full":
            W = W - step * grad
        else:
            for batch in _batches(Xb.shape[0], cfg.batch, rng):
                _, batch_grad = hinge_objective_and_subgrad(W, Xb[batch], Y[batch], cfg.l2)
                W = W - step * batch_grad
        objective, grad = hinge_objective_and_subgrad(W, Xb, Y, cfg.l2)
        if not np.all(np.isfinite(objective)):
            raise TrainingError("svm_ovr", epoch)
        improved = objective < best_objective
        best_W[improved] = W[improved]
        best_objective[improved] = objective[improved]
        history.append(float(best_objective.sum()))

    best_W[~present] = 0.0
    best_W[~present, -1] = -1.0
    constant = np.flatnonzero(X.std(axis=0) == 0) if X.shape[0] else np.arange(0)
    best_W[:, constant] = 0.0
    return LinearModel(best_W, means, stds, "svm_ovr", d.feature_names,
                       classes_present=tuple(bool(p) for p in present), loss_history=history)


def decision_values(m: LinearModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != m.feature_means.shape[0]:
        raise DomainError(f"expected rows of {m.feature_means.shape[0]} features, got shape {X.shape}")
    return _design(X, m.feature_means, m.feature_stddevs) @ m.weights.T


def predict_proba(m: LinearModel, X: np.ndarray) -> np.ndarray:
    return softmax(decision_values(m, X), axis=1)


def predict_linear_rows(m: LinearModel, X: np.ndarray) -> np.ndarray:
    scores = decision_values(m, X)
    # Vacuous one-vs-rest classes never win.
    scores = np.where(np.asarray(m.classes_present)[None, :], scores, -np.inf)
    return np.argmax(scores, axis=1)


def predict_linear(m: LinearModel, row: Sequence[float]) -> TurnoverClass:
    """Highest score wins, ties toward the lower class."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise DomainError("predict_linear takes a single feature vector")
    return CLASS_ORDER[int(predict_linear_rows(m, row.reshape(1, -1))[0])]


def association_p_value(x: np.ndarray, y: np.ndarray) -> float:
    """
    Permutation-asymptotic test of a numeric feature against the class:
    ``(n - 1) · SS_between / SS_total`` is chi-squared with K' − 1 degrees
    of freedom, K' being the classes present.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    present = np.unique(y)
    n = x.shape[0]
    total = float(np.sum((x - x.mean()) ** 2))
    if present.size < 2 or n < 2 or total <= 0:
        return 1.0
    between = sum(float(np.sum(y == k)) * (float(x[y == k].mean()) - float(x.mean())) ** 2 for k in present)
    return float(chi2.sf((n - 1) * between / total, present.size - 1))


def _bonferroni(p_value: float, n_tests: int) -> float:
    return min(1.0, p_value * max(n_tests, 1))


def _significance_gate(d: LabeledDataset, node_rows: np.ndarray, split: Split) -> bool:
    # Both the split feature and the chosen cut must be associated with the label.
    tests = split.n_candidate_features
    y = d.labels[node_rows]
    if _bonferroni(association_p_value(d.rows[node_rows, split.feature], y), tests) >= PARTY_ALPHA:
        return False
    table = np.array([split.left_counts, split.right_counts], dtype=np.float64)
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return False
    _, p_value, _, _ = chi2_contingency(table, correction=False)
    return _bonferroni(p_value, tests) < PARTY_ALPHA


def single_tree_params(variant: str, n_features: int) -> TreeParams:
    if variant == "rpartlike":
        return TreeParams(min_samples_leaf=RPART_MIN_LEAF, mtry=n_features)
    if variant == "partylike":
        return TreeParams(mtry=n_features)
    raise DomainError(f"unknown tree variant {variant!r}; expected one of {TREE_VARIANTS}")


def train_single_tree(d: LabeledDataset, variant: str, seed: int = 0) -> DecisionTree:
    """
    One CART tree over all features at every node. ``partylike`` accepts a
    split only when the split feature and the split side are both
    significantly associated with the label after Bonferroni over the
    candidate features.
    """
    if d.n_rows == 0:
        raise DomainError("train_single_tree needs training rows")
    params = single_tree_params(variant, d.n_features)
    gate = _significance_gate if variant == "partylike" else None
    return train_tree(d, np.arange(d.n_rows), params, seed, split_gate=gate)


def linear_to_dict(m: LinearModel, name: str) -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": m.kind,
        "name": name,
        "feature_names": list(m.feature_names),
        "params": {},
        "payload": {
            "weights": m.weights.tolist(),
            "feature_means": m.feature_means.tolist(),
            "feature_stddevs": m.feature_stddevs.tolist(),
            "classes_present": list(m.classes_present),
            "loss_history": list(m.loss_history),
        },
    }


def linear_from_dict(data: Mapping) -> LinearModel:
    if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") not in LINEAR_KINDS:
        raise DomainError(f"not a version-{SCHEMA_VERSION} linear model document")
    payload = data["payload"]
    return LinearModel(
        weights=np.asarray(payload["weights"], dtype=np.float64),
        feature_means=np.asarray(payload["feature_means"], dtype=np.float64),
        feature_stddevs=np.asarray(payload["feature_stddevs"], dtype=np.float64),
        kind=data["kind"],
        feature_names=tuple(data["feature_names"]),
        classes_present=tuple(bool(p) for p in payload["classes_present"]),
        loss_history=[float(v) for v in payload["loss_history"]],
    )


def tree_to_dict(tree: DecisionTree, name: str, variant: str, feature_names: Sequence[str]) -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "tree",
        "name": name,
        "feature_names": list(feature_names),
        "params": {"variant": variant},
        "payload": tree.to_dict(),
    }


def tree_from_dict(data: Mapping) -> DecisionTree:
    if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "tree":
        raise DomainError(f"not a version-{SCHEMA_VERSION} tree document")
    return DecisionTree.from_dict(data["payload"])
