"""
CART decision trees and the random forest ensemble for turnover-forest

Trees are grown with Gini impurity over midpoint thresholds and stored as
flat node arrays, which makes prediction vectorised and serialization a plain
JSON dump. The forest bags trees over bootstrap samples with per-tree seeds
fixed before any parallel work starts.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from data_model import CLASS_ORDER, N_CLASSES, DomainError, LabeledDataset, TurnoverClass
from seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# Gini decreases closer than this are ties.
TIE_TOLERANCE = 1e-12
LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    """Growth limits; ``mtry=None`` means floor(sqrt(F)) at training time."""

    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    mtry: Optional[int] = None

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise DomainError(f"max_depth must be non-negative, got {self.max_depth}")
        if self.min_samples_split < 1:
            raise DomainError(f"min_samples_split must be positive, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise DomainError(f"min_samples_leaf must be positive, got {self.min_samples_leaf}")
        if self.mtry is not None and self.mtry < 1:
            raise DomainError(f"mtry must be positive, got {self.mtry}")

    def resolve_mtry(self, n_features: int) -> int:
        if n_features < 1:
            raise DomainError("cannot train on zero features")
        mtry = self.mtry if self.mtry is not None else max(1, int(math.isqrt(n_features)))
        if mtry > n_features:
            raise DomainError(f"mtry={mtry} exceeds the {n_features} available features")
        return mtry

    def to_dict(self) -> Dict:
        return {
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "mtry": self.mtry,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TreeParams":
        return cls(
            max_depth=data.get("max_depth"),
            min_samples_split=int(data.get("min_samples_split", 2)),
            min_samples_leaf=int(data.get("min_samples_leaf", 1)),
            mtry=data.get("mtry"),
        )


def gini_impurity(counts: Union[Mapping, Sequence[float], np.ndarray]) -> float:
    """1 − Σ p_k² over a class histogram."""
    if isinstance(counts, Mapping):
        values = np.asarray(list(counts.values()), dtype=np.float64)
    else:
        values = np.asarray(counts, dtype=np.float64)
    if np.any(values < 0):
        raise DomainError("class counts must be non-negative")
    total = values.sum()
    if total <= 0:
        raise DomainError("gini impurity of an empty node is undefined")
    p = values / total
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    impurity_decrease: float
    left_counts: Tuple[int, ...] = ()
    right_counts: Tuple[int, ...] = ()
    # Number of (feature, threshold) pairs that were scored at this node.
    n_candidates: int = 0
    n_candidate_features: int = 0


SplitGate = Callable[[LabeledDataset, np.ndarray, Split], bool]


def _feature_split(
    x: np.ndarray,
    y_onehot: np.ndarray,
    parent_counts: np.ndarray,
    parent_gini: float,
    min_samples_leaf: int,
) -> Tuple[Optional[int], float, float, np.ndarray, int]:
    """Best midpoint split of one feature column: (position, threshold, decrease, left counts, n scored)."""
    m = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cum = np.cumsum(y_onehot[order], axis=0)

    positions = np.flatnonzero(xs[:-1] < xs[1:])
    if positions.size == 0:
        return None, 0.0, -np.inf, parent_counts, 0
    n_left = positions + 1
    keep = (n_left >= min_samples_leaf) & (m - n_left >= min_samples_leaf)
    positions, n_left = positions[keep], n_left[keep]
    if positions.size == 0:
        return None, 0.0, -np.inf, parent_counts, 0

    left = cum[positions]
    right = parent_counts[None, :] - left
    n_right = m - n_left
    # n_s * gini_s = n_s - sum(c^2) / n_s
    weighted = (
        n_left - np.sum(left * left, axis=1) / n_left
        + n_right - np.sum(right * right, axis=1) / n_right
    ) / m
    decrease = parent_gini - weighted

    best = float(decrease.max())
    pick = int(np.flatnonzero(decrease >= best - TIE_TOLERANCE)[0])
    lo, hi = xs[positions[pick]], xs[positions[pick] + 1]
    threshold = (lo + hi) / 2.0
    if not threshold < hi:
        threshold = lo
    return int(positions[pick]), float(threshold), float(decrease[pick]), left[pick], int(positions.size)


def best_split(
    d: LabeledDataset,
    row_indices: Sequence[int],
    candidate_features: Sequence[int],
    min_samples_leaf: int = 1,
) -> Optional[Split]:
    """
    Best Gini split over the candidate features, or None when nothing helps.

    Thresholds are midpoints between consecutive distinct values; ties go to
    the lower feature index, then the lower threshold.
    """
    rows = np.asarray(row_indices, dtype=np.int64)
    if rows.size == 0:
        raise DomainError("best_split needs at least one row")
    y = d.labels[rows]
    parent_counts = np.bincount(y, minlength=N_CLASSES).astype(np.float64)
    if parent_counts.max() == rows.size:
        return None
    parent_gini = gini_impurity(parent_counts)
    y_onehot = np.eye(N_CLASSES)[y]

    best: Optional[Split] = None
    scored = 0
    for feature in sorted(set(int(f) for f in candidate_features)):
        _, threshold, decrease, left, n_scored = _feature_split(
            d.rows[rows, feature], y_onehot, parent_counts, parent_gini, min_samples_leaf
        )
        scored += n_scored
        if n_scored == 0:
            continue
        if best is None or decrease > best.impurity_decrease + TIE_TOLERANCE:
            best = Split(
                feature=feature,
                threshold=threshold,
                impurity_decrease=decrease,
                left_counts=tuple(int(c) for c in left),
                right_counts=tuple(int(c) for c in parent_counts - left),
            )

    if best is None or best.impurity_decrease <= TIE_TOLERANCE:
        return None
    return Split(best.feature, best.threshold, best.impurity_decrease,
                 best.left_counts, best.right_counts, scored, len(set(int(f) for f in candidate_features)))


@dataclass(frozen=True)
class DecisionTree:
    """
    Flat CART tree. Node 0 is the root; ``feature[i] == -1`` marks a leaf.
    Internal nodes send ``x[feature] <= threshold`` left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.counts, axis=1)

    def is_leaf(self, node: int = 0) -> bool:
        return int(self.feature[node]) == LEAF

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature != LEAF])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            current = node[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        X = _check_matrix(X, self.n_features)
        return self.predicted[self.apply(X)]

    def predict(self, row: Sequence[float]) -> TurnoverClass:
        return CLASS_ORDER[int(self.predict_rows(np.asarray([row]))[0])]

    def to_dict(self) -> Dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DecisionTree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            counts=np.asarray(data["counts"], dtype=np.int64).reshape(-1, N_CLASSES),
            n_features=int(data["n_features"]),
        )


def _check_matrix(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DomainError(f"expected rows of {n_features} features, got shape {X.shape}")
    return X


def train_tree(
    d: LabeledDataset,
    row_indices: Sequence[int],
    params: TreeParams,
    rng_seed: int,
    split_gate: Optional[SplitGate] = None,
) -> DecisionTree:
    """
    Grow one CART tree on ``row_indices`` (duplicates allowed, as in a bootstrap).

    Every node draws a fresh sample of ``mtry`` candidate features from the
    tree's own generator; nodes are numbered depth-first, left child first,
    so (d, rows, params, seed) fix the tree completely. ``split_gate`` can
    veto a split, turning the node into a leaf.
    """
    rows = np.asarray(row_indices, dtype=np.int64)
    if rows.size == 0:
        raise DomainError("train_tree needs at least one row")
    n_features = d.n_features
    mtry = params.resolve_mtry(n_features)
    rng = make_rng(rng_seed)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    counts: List[np.ndarray] = []

    # (rows, depth, parent, is_left)
    stack = [(rows, 0, -1, False)]
    while stack:
        node_rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        node_counts = np.bincount(d.labels[node_rows], minlength=N_CLASSES)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append(node_counts)

        if (params.max_depth is not None and depth >= params.max_depth) \
                or node_rows.size < params.min_samples_split \
                or node_counts.max() == node_rows.size:
            continue

        if mtry >= n_features:
            candidates = np.arange(n_features)
        else:
            candidates = np.sort(rng.choice(n_features, size=mtry, replace=False))
        split = best_split(d, node_rows, candidates, params.min_samples_leaf)
        if split is None or (split_gate is not None and not split_gate(d, node_rows, split)):
            continue

        feature[node] = split.feature
        threshold[node] = split.threshold
        goes_left = d.rows[node_rows, split.feature] <= split.threshold
        stack.append((node_rows[~goes_left], depth + 1, node, False))
        stack.append((node_rows[goes_left], depth + 1, node, True))

    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        counts=np.vstack(counts).astype(np.int64),
        n_features=n_features,
    )


def bootstrap_indices(n_rows: int, tree_seed: int) -> np.ndarray:
    """|d| draws with replacement from the tree's bootstrap stream."""
    return make_rng(tree_seed, "bootstrap").integers(0, n_rows, size=n_rows)


@dataclass
class ForestModel:
    trees: List[DecisionTree]
    params: TreeParams
    n_trees: int
    feature_names: Tuple[str, ...]
    per_tree_seeds: List[int]
    seed: int = 0
    bootstrap: bool = True
    n_train_rows: int = 0
    oob_accuracy: Optional[float] = None
    # Per-row OOB vote histograms over the training rows; not serialized.
    oob_votes: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.trees) == self.n_trees == len(self.per_tree_seeds)):
            raise DomainError("trees, n_trees and per_tree_seeds must agree")

    def oob_mask(self, tree_index: int) -> np.ndarray:
        """True for training rows the tree never saw."""
        mask = np.ones(self.n_train_rows, dtype=bool)
        if self.bootstrap:
            mask[bootstrap_indices(self.n_train_rows, self.per_tree_seeds[tree_index])] = False
        else:
            mask[:] = False
        return mask

    def votes(self, X: np.ndarray) -> np.ndarray:
        """(rows × classes) vote counts; each row sums to n_trees."""
        X = _check_matrix(X, len(self.feature_names))
        votes = np.zeros((X.shape[0], N_CLASSES), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict_rows(X)), 1)
        return votes

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)


def _fit_one(d: LabeledDataset, params: TreeParams, tree_seed: int, bootstrap: bool) -> DecisionTree:
    rows = bootstrap_indices(d.n_rows, tree_seed) if bootstrap else np.arange(d.n_rows)
    return train_tree(d, rows, params, tree_seed)


def train_forest(
    d: LabeledDataset,
    n_trees: int = 500,
    params: TreeParams = TreeParams(),
    seed: int = 0,
    workers: int = 1,
    bootstrap: bool = True,
) -> ForestModel:
    """
    Bag ``n_trees`` CART trees over bootstrap samples of ``d``.

    Seeds for every tree are derived up front from ``seed``; the trained
    model is identical for any ``workers`` value.
    """
    if d.n_rows == 0:
        raise DomainError("cannot train a forest on an empty dataset")
    if n_trees < 1:
        raise DomainError(f"n_trees must be at least 1, got {n_trees}")
    params.resolve_mtry(d.n_features)

    per_tree_seeds = [derive_seed(seed, "tree", t) for t in range(n_trees)]
    if workers > 1:
        trees = Parallel(n_jobs=workers, prefer="threads")(
            delayed(_fit_one)(d, params, s, bootstrap) for s in per_tree_seeds
        )
    else:
        trees = [_fit_one(d, params, s, bootstrap) for s in per_tree_seeds]

    model = ForestModel(
        trees=list(trees),
        params=params,
        n_trees=n_trees,
        feature_names=d.feature_names,
        per_tree_seeds=per_tree_seeds,
        seed=seed,
        bootstrap=bootstrap,
        n_train_rows=d.n_rows,
    )
    if bootstrap:
        oob_votes = np.zeros((d.n_rows, N_CLASSES), dtype=np.int64)
        for t, tree in enumerate(model.trees):
            oob = np.flatnonzero(model.oob_mask(t))
            if oob.size:
                np.add.at(oob_votes, (oob, tree.predict_rows(d.rows[oob])), 1)
        voted = oob_votes.sum(axis=1) > 0
        model.oob_votes = oob_votes
        if voted.any():
            hits = np.argmax(oob_votes[voted], axis=1) == d.labels[voted]
            model.oob_accuracy = float(hits.mean())
    logger.info("trained %d trees on %d rows (oob accuracy %s)", n_trees, d.n_rows, model.oob_accuracy)
    return model


def predict_forest(m: ForestModel, row: Sequence[float]) -> Tuple[TurnoverClass, Dict[TurnoverClass, int]]:
    """Majority vote over the trees, ties toward the lower class."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != len(m.feature_names):
        raise DomainError(f"expected {len(m.feature_names)} features, got {row.shape}")
    votes = m.votes(row.reshape(1, -1))[0]
    histogram = {cls: int(votes[cls]) for cls in CLASS_ORDER}
    return CLASS_ORDER[int(np.argmax(votes))], histogram


@dataclass(frozen=True)
class ImportanceScores:
    feature_names: Tuple[str, ...]
    raw_importances: np.ndarray  # trees × features
    z_scores: np.ndarray

    def z_by_name(self) -> Dict[str, float]:
        return {name: float(z) for name, z in zip(self.feature_names, self.z_scores)}


def standardized_importance(raw: np.ndarray) -> np.ndarray:
    """mean / (sd / sqrt(n)) per column; 0 where the spread is 0."""
    raw = np.asarray(raw, dtype=np.float64)
    n = raw.shape[0]
    if n < 2:
        return np.zeros(raw.shape[1])
    mean = raw.mean(axis=0)
    sd = raw.std(axis=0, ddof=1)
    z = np.zeros(raw.shape[1])
    spread = sd > 0
    z[spread] = mean[spread] / (sd[spread] / math.sqrt(n))
    return z


def _tree_importance(
    tree: DecisionTree, X: np.ndarray, y: np.ndarray, oob: np.ndarray, seed: int, tree_index: int
) -> np.ndarray:
    n_features = X.shape[1]
    importance = np.zeros(n_features)
    if oob.size < 2:
        logger.info("tree %d has %d out-of-bag rows; importance set to 0", tree_index, oob.size)
        return importance
    X_oob = X[oob]
    y_oob = y[oob]
    baseline = float(np.mean(tree.predict_rows(X_oob) == y_oob))
    used = set(tree.used_features().tolist())
    rng = make_rng(seed, "permute", tree_index)
    for j in range(n_features):
        permutation = rng.permutation(oob.size)
        if j not in used:
            continue
        shuffled = X_oob.copy()
        shuffled[:, j] = X_oob[permutation, j]
        importance[j] = baseline - float(np.mean(tree.predict_rows(shuffled) == y_oob))
    return importance


def permutation_importance(m: ForestModel, d: LabeledDataset, seed: int, workers: int = 1) -> ImportanceScores:
    """
    Per-tree OOB permutation importance and its z-score.

    ``d`` must be the forest's training set: out-of-bag rows are recovered
    from the per-tree seeds.
    """
    if d.n_rows != m.n_train_rows or d.feature_names != m.feature_names:
        raise DomainError("permutation importance needs the forest's own training set")
    masks = [np.flatnonzero(m.oob_mask(t)) for t in range(m.n_trees)]
    if workers > 1:
        per_tree = Parallel(n_jobs=workers, prefer="threads")(
            delayed(_tree_importance)(tree, d.rows, d.labels, masks[t], seed, t)
            for t, tree in enumerate(m.trees)
        )
    else:
        per_tree = [_tree_importance(tree, d.rows, d.labels, masks[t], seed, t)
                    for t, tree in enumerate(m.trees)]
    raw = np.vstack(per_tree) if per_tree else np.zeros((0, d.n_features))
    return ImportanceScores(d.feature_names, raw, standardized_importance(raw))


def forest_to_dict(m: ForestModel, name: str = "randforest") -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "forest",
        "name": name,
        "feature_names": list(m.feature_names),
        "params": m.params.to_dict(),
        "payload": {
            "n_trees": m.n_trees,
            "seed": m.seed,
            "bootstrap": m.bootstrap,
            "n_train_rows": m.n_train_rows,
            "oob_accuracy": m.oob_accuracy,
            "per_tree_seeds": list(m.per_tree_seeds),
            "trees": [tree.to_dict() for tree in m.trees],
        },
    }


def forest_from_dict(data: Mapping) -> ForestModel:
    if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "forest":
        raise DomainError(f"not a version-{SCHEMA_VERSION} forest document")
    payload = data["payload"]
    return ForestModel(
        trees=[DecisionTree.from_dict(t) for t in payload["trees"]],
        params=TreeParams.from_dict(data["params"]),
        n_trees=int(payload["n_trees"]),
        feature_names=tuple(data["feature_names"]),
        per_tree_seeds=[int(s) for s in payload["per_tree_seeds"]],
        seed=int(payload["seed"]),
        bootstrap=bool(payload["bootstrap"]),
        n_train_rows=int(payload["n_train_rows"]),
        oob_accuracy=payload.get("oob_accuracy"),
    )
