"""
Boruta all-relevant feature selection around the from-scratch random forest

Each iteration extends the active features with permuted shadow copies,
trains a fresh forest, and counts a hit for every real feature whose
importance z-score beats the best shadow (MZSA). A two-sided binomial test
on the hit counts confirms or rejects features; rejected features leave the
information system for good.
"""

import logging
import statistics
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy.stats import binom

from data_model import DomainError, LabeledDataset
from forest import TreeParams, permutation_importance, train_forest
from seeding import derive_seed, make_rng, validate_seed

logger = logging.getLogger(__name__)

SHADOW_PREFIX = "shadow_"
CORRECTIONS = ("bonferroni", "none")


class Decision(str, Enum):
    CONFIRMED = "Confirmed"
    TENTATIVE = "Tentative"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class BorutaConfig:
    max_iterations: int = 100
    alpha: float = 0.05
    multiple_testing: str = "bonferroni"
    forest_params: TreeParams = field(default_factory=TreeParams)
    n_trees_per_iteration: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.max_iterations < 1:
            raise DomainError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.multiple_testing not in CORRECTIONS:
            raise DomainError(f"multiple_testing must be one of {CORRECTIONS}")
        if self.n_trees_per_iteration < 1:
            raise DomainError("n_trees_per_iteration must be at least 1")
        validate_seed(self.seed)


def add_shadow_features(d: LabeledDataset, seed: int) -> LabeledDataset:
    """Append a ``shadow_<name>`` column per feature, each independently permuted."""
    if d.n_features < 1 or d.n_rows < 1:
        raise DomainError("shadow features need a non-empty dataset")
    generator = make_rng(seed, "shadow")
    shadows = np.empty_like(d.rows)
    for j in range(d.n_features):
        shadows[:, j] = d.rows[generator.permutation(d.n_rows), j]
    names = d.feature_names + tuple(f"{SHADOW_PREFIX}{name}" for name in d.feature_names)
    return LabeledDataset(names, np.hstack([d.rows, shadows]), d.labels)


@dataclass(frozen=True)
class IterationResult:
    z: Dict[str, float]
    mzsa: float
    hits: Set[str]
    shadow_min: float
    shadow_mean: float
    shadow_max: float


def boruta_iteration(
    d: LabeledDataset,
    active: Sequence[str],
    cfg: BorutaConfig,
    iteration: int,
    workers: int = 1,
) -> IterationResult:
    """One shadow round over the ``active`` features of ``d``."""
    if not active:
        raise DomainError("boruta_iteration needs at least one active feature")
    iteration_seed = derive_seed(cfg.seed, "boruta", iteration)
    extended = add_shadow_features(d.select_features(active), derive_seed(iteration_seed, "shadow"))
    forest = train_forest(
        extended,
        n_trees=cfg.n_trees_per_iteration,
        params=cfg.forest_params,
        seed=derive_seed(iteration_seed, "forest"),
        workers=workers,
    )
    scores = permutation_importance(forest, extended, derive_seed(iteration_seed, "importance"), workers)

    n_active = len(active)
    real = scores.z_scores[:n_active]
    shadow = scores.z_scores[n_active:]
    mzsa = float(shadow.max())
    z = {name: float(value) for name, value in zip(active, real)}
    hits = {name for name, value in z.items() if value > mzsa}
    return IterationResult(
        z=z,
        mzsa=mzsa,
        hits=hits,
        shadow_min=float(shadow.min()),
        shadow_mean=float(shadow.mean()),
        shadow_max=mzsa,
    )


def two_sided_pvalue(hits: int, trials: int) -> float:
    """Two-sided binomial test of ``hits`` successes in ``trials`` against p = 1/2."""
    if trials < 1:
        raise DomainError("the binomial test needs at least one trial")
    lower = binom.cdf(hits, trials, 0.5)
    upper = binom.sf(hits - 1, trials, 0.5)
    return float(min(1.0, 2.0 * min(lower, upper)))


def decide_features(
    hits: Mapping[str, int],
    trials: int,
    cfg: BorutaConfig,
) -> Dict[str, Decision]:
    """
    Confirm features hitting significantly more than half the time, reject
    those hitting significantly less. With bonferroni, alpha is divided by
    the number of features passed in (the still-undecided ones).
    """
    if trials < 1:
        raise DomainError("decide_features needs at least one trial")
    threshold = cfg.alpha
    if cfg.multiple_testing == "bonferroni" and hits:
        threshold = cfg.alpha / len(hits)

    decisions = {}
    for name, count in hits.items():
        p = two_sided_pvalue(count, trials)
        if p < threshold and count * 2 > trials:
            decisions[name] = Decision.CONFIRMED
        elif p < threshold and count * 2 < trials:
            decisions[name] = Decision.REJECTED
        else:
            decisions[name] = Decision.TENTATIVE
    return decisions


@dataclass
class FeatureDecision:
    feature: str
    decision: Decision = Decision.TENTATIVE
    hits: int = 0
    trials: int = 0
    z_history: List[float] = field(default_factory=list)

    @property
    def mean_z(self) -> float:
        return float(np.mean(self.z_history)) if self.z_history else 0.0

    @property
    def median_z(self) -> float:
        return float(statistics.median(self.z_history)) if self.z_history else 0.0


@dataclass
class BorutaReport:
    features: List[FeatureDecision]
    mzsa_history: List[float]
    shadow_history: List[Tuple[float, float, float]]
    iterations_run: int

    def decision_of(self, feature: str) -> Decision:
        for item in self.features:
            if item.feature == feature:
                return item.decision
        raise KeyError(feature)

    def names_with(self, decision: Decision) -> List[str]:
        return [f.feature for f in self.features if f.decision == decision]

    def selected_features(self, include_tentative: bool = False) -> List[str]:
        keep = {Decision.CONFIRMED} | ({Decision.TENTATIVE} if include_tentative else set())
        return [f.feature for f in self.features if f.decision in keep]

    def ranks(self) -> Dict[str, int]:
        """Confirmed 1, Tentative 2, Rejected 3.. ordered by median z (higher first)."""
        ranks = {}
        for item in self.features:
            if item.decision == Decision.CONFIRMED:
                ranks[item.feature] = 1
            elif item.decision == Decision.TENTATIVE:
                ranks[item.feature] = 2
        rejected = sorted(
            (f for f in self.features if f.decision == Decision.REJECTED),
            key=lambda f: (-f.median_z, f.feature),
        )
        for offset, item in enumerate(rejected):
            ranks[item.feature] = 3 + offset
        return ranks

    def to_frame(self) -> pd.DataFrame:
        ranks = self.ranks()
        return pd.DataFrame(
            [
                {
                    "feature": f.feature,
                    "decision": f.decision.value,
                    "hits": f.hits,
                    "trials": f.trials,
                    "mean_z": f.mean_z,
                    "median_z": f.median_z,
                    "rank": ranks[f.feature],
                }
                for f in self.features
            ],
            columns=["feature", "decision", "hits", "trials", "mean_z", "median_z", "rank"],
        )

    def history(self) -> Dict:
        return {
            "iterations_run": self.iterations_run,
            "mzsa_history": list(self.mzsa_history),
            "shadow_history": [
                {"min": lo, "mean": mean, "max": hi} for lo, mean, hi in self.shadow_history
            ],
            "z_history": {f.feature: list(f.z_history) for f in self.features},
        }


def run_boruta(d: LabeledDataset, cfg: BorutaConfig, workers: int = 1) -> BorutaReport:
    """
    Iterate shadow rounds until every feature is decided or
    ``cfg.max_iterations`` is reached. Features still undecided at the end
    stay Tentative.
    """
    if d.n_features == 0:
        raise DomainError("Boruta needs at least one feature")

    state = {name: FeatureDecision(name) for name in d.feature_names}
    mzsa_history: List[float] = []
    shadow_history: List[Tuple[float, float, float]] = []
    iterations_run = 0

    for iteration in range(1, cfg.max_iterations + 1):
        active = [name for name in d.feature_names if state[name].decision != Decision.REJECTED]
        result = boruta_iteration(d, active, cfg, iteration, workers)
        iterations_run = iteration
        mzsa_history.append(result.mzsa)
        shadow_history.append((result.shadow_min, result.shadow_mean, result.shadow_max))

        for name in active:
            item = state[name]
            item.trials += 1
            item.hits += int(name in result.hits)
            item.z_history.append(result.z[name])

        undecided = {name: state[name].hits for name in active
                     if state[name].decision == Decision.TENTATIVE}
        if undecided:
            trials = state[next(iter(undecided))].trials
            for name, decision in decide_features(undecided, trials, cfg).items():
                if decision != Decision.TENTATIVE:
                    logger.info("iteration %d: %s %s", iteration, name, decision.value)
                state[name].decision = decision

        if not any(item.decision == Decision.TENTATIVE for item in state.values()):
            break

    logger.info(
        "Boruta finished after %d iterations: %d confirmed, %d tentative, %d rejected",
        iterations_run,
        sum(f.decision == Decision.CONFIRMED for f in state.values()),
        sum(f.decision == Decision.TENTATIVE for f in state.values()),
        sum(f.decision == Decision.REJECTED for f in state.values()),
    )
    return BorutaReport(
        features=[state[name] for name in d.feature_names],
        mzsa_history=mzsa_history,
        shadow_history=shadow_history,
        iterations_run=iterations_run,
    )
