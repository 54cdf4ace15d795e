"""
Model comparison, figure data and synthetic BSE-shaped data

Confusion matrices and the accuracy rate, the side-by-side report of every
trained classifier, the yearly-average-turnover and shares-per-class series
behind the two figures, and a seeded generator of labelled records.
"""

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from baselines import (
    LinearModel,
    linear_from_dict,
    linear_to_dict,
    predict_linear_rows,
    predict_proba,
    tree_from_dict,
    tree_to_dict,
)
from data_model import (
    CLASS_ORDER,
    DEFAULT_BINS,
    N_CLASSES,
    DomainError,
    LabeledDataset,
    StockRecord,
    TurnoverBins,
    TurnoverClass,
    discretize_turnover,
)
from forest import DecisionTree, ForestModel, forest_from_dict, forest_to_dict
from seeding import make_rng, validate_seed

logger = logging.getLogger(__name__)

MODEL_KINDS = ("forest", "tree", "svm_ovr", "multinomial_logistic")
SYNTHETIC_COMPANIES = ("Apollo", "HDFC", "Infosys", "Sintex")

# Published figure values, printed next to computed ones for comparison.
EXPECTED_YEARLY_MEANS = {("Apollo", 2005): 18_020_386.0, ("Apollo", 2013): 66_527_438.0}
EXPECTED_SHARES_BY_CLASS = {TurnoverClass.D: 529_957_607.0, TurnoverClass.E: 617_959_679.0}


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes, both in A..E order."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.shape != (N_CLASSES, N_CLASSES):
            raise DomainError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, got {counts.shape}")
        if np.any(counts < 0):
            raise DomainError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    def to_frame(self) -> pd.DataFrame:
        labels = [c.name for c in CLASS_ORDER]
        frame = pd.DataFrame(self.counts, index=labels, columns=labels)
        frame.index.name = "true\\predicted"
        return frame


def confusion_matrix(
    truth: Sequence[Union[TurnoverClass, int]],
    pred: Sequence[Union[TurnoverClass, int]],
) -> ConfusionMatrix:
    truth = np.asarray([int(t) for t in truth], dtype=np.int64)
    pred = np.asarray([int(p) for p in pred], dtype=np.int64)
    if truth.shape != pred.shape:
        raise DomainError(f"{truth.size} true labels but {pred.size} predictions")
    if truth.size == 0:
        raise DomainError("confusion matrix needs at least one prediction")
    for name, labels in (("true", truth), ("predicted", pred)):
        outside = labels[(labels < 0) | (labels >= N_CLASSES)]
        if outside.size:
            raise DomainError(f"{name} label {int(outside[0])} is outside 0..{N_CLASSES - 1}")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


def accuracy(c: ConfusionMatrix) -> float:
    """Correctly classified observations over all observations, in percent."""
    if c.total == 0:
        raise DomainError("accuracy of an empty confusion matrix")
    return c.correct / c.total * 100.0


@dataclass
class TrainedModel:
    """A trained classifier of any kind with the feature space it was fitted on."""

    name: str
    kind: str
    model: Union[ForestModel, DecisionTree, LinearModel]
    feature_names: Tuple[str, ...]
    params: Dict = field(default_factory=dict)
    train_seconds: float = 0.0
    # Companies seen at ingest, whether or not their indicators survived selection.
    company_vocabulary: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.kind!r}")
        self.feature_names = tuple(self.feature_names)
        self.company_vocabulary = tuple(self.company_vocabulary)

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        if self.kind in ("forest", "tree"):
            return self.model.predict_rows(X)
        return predict_linear_rows(self.model, X)

    def vote_histograms(self, X: np.ndarray) -> Optional[np.ndarray]:
        return self.model.votes(X) if self.kind == "forest" else None

    def probabilities(self, X: np.ndarray) -> Optional[np.ndarray]:
        return predict_proba(self.model, X) if self.kind == "multinomial_logistic" else None

    def to_dict(self) -> Dict:
        if self.kind == "forest":
            data = forest_to_dict(self.model, self.name)
        elif self.kind == "tree":
            data = tree_to_dict(self.model, self.name, self.params.get("variant", ""), self.feature_names)
        else:
            data = linear_to_dict(self.model, self.name)
        data["company_vocabulary"] = list(self.company_vocabulary)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainedModel":
        kind = data.get("kind")
        if kind == "forest":
            model = forest_from_dict(data)
        elif kind == "tree":
            model = tree_from_dict(data)
        elif kind in ("svm_ovr", "multinomial_logistic"):
            model = linear_from_dict(data)
        else:
            raise DomainError(f"unknown model kind {kind!r}")
        return cls(
            name=data["name"],
            kind=kind,
            model=model,
            feature_names=tuple(data["feature_names"]),
            params=dict(data.get("params") or {}),
            company_vocabulary=tuple(data.get("company_vocabulary") or ()),
        )


@dataclass(frozen=True)
class ModelScore:
    name: str
    accuracy_percent: float
    confusion: ConfusionMatrix
    train_seconds: float = 0.0


@dataclass(frozen=True)
class ComparativeReport:
    rows: Tuple[ModelScore, ...]
    fingerprint: Dict

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "model": row.name,
                    "accuracy_percent": round(row.accuracy_percent, 2),
                    "train_seconds": round(row.train_seconds, 3),
                }
                for row in self.rows
            ],
            columns=["model", "accuracy_percent", "train_seconds"],
        )

    def score_of(self, name: str) -> ModelScore:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)


def comparative_report(
    models: Sequence[TrainedModel],
    valid: LabeledDataset,
    split_seed: Optional[int] = None,
    n_train: Optional[int] = None,
) -> ComparativeReport:
    """
    Score every model on the same validation rows. Rows come out by
    descending accuracy, then by name, independent of input order.
    """
    if valid.n_rows == 0:
        raise DomainError("comparative report needs validation rows")
    scores = []
    for m in models:
        if m.feature_names != valid.feature_names:
            raise DomainError(
                f"model {m.name} was trained on a different feature space "
                f"({len(m.feature_names)} features, validation has {valid.n_features})"
            )
        predicted = m.predict_rows(valid.rows)
        cm = confusion_matrix(valid.labels, predicted)
        scores.append(ModelScore(m.name, accuracy(cm), cm, float(m.train_seconds)))
        logger.info("%s: %.2f%% on %d validation rows", m.name, scores[-1].accuracy_percent, valid.n_rows)

    scores.sort(key=lambda s: (-s.accuracy_percent, s.name))
    fingerprint = {
        "n_train": n_train,
        "n_valid": valid.n_rows,
        "class_histogram": valid.class_histogram(),
        "split_seed": split_seed,
    }
    return ComparativeReport(tuple(scores), fingerprint)


def yearly_average_turnover(records: Sequence[StockRecord]) -> pd.DataFrame:
    """Mean total turnover per (company, calendar year), ordered by company then year."""
    if not records:
        raise DomainError("yearly average turnover needs records")
    frame = pd.DataFrame(
        {
            "company": [r.company for r in records],
            "year": [r.date.year for r in records],
            "turnover": [r.total_turnover for r in records],
        }
    )
    grouped = frame.groupby(["company", "year"], sort=True)["turnover"].mean().reset_index()
    return grouped.rename(columns={"turnover": "mean_turnover"})


def shares_sum_by_class(
    records: Sequence[StockRecord],
    bins: TurnoverBins = DEFAULT_BINS,
) -> Dict[TurnoverClass, float]:
    """Total no_of_shares per turnover class; every class present, 0 when empty."""
    sums = {cls: 0.0 for cls in CLASS_ORDER}
    if not records:
        return sums
    frame = pd.DataFrame(
        {
            "label": [int(discretize_turnover(r.total_turnover, bins)) for r in records],
            "shares": [r.no_of_shares for r in records],
        }
    )
    for label, total in frame.groupby("label")["shares"].sum().items():
        sums[CLASS_ORDER[int(label)]] = float(total)
    return sums


def figure3_frame(records: Sequence[StockRecord]) -> pd.DataFrame:
    return yearly_average_turnover(records)


def figure4_frame(records: Sequence[StockRecord], bins: TurnoverBins = DEFAULT_BINS) -> pd.DataFrame:
    sums = shares_sum_by_class(records, bins)
    return pd.DataFrame(
        {"class": [c.name for c in CLASS_ORDER], "sum_no_of_shares": [sums[c] for c in CLASS_ORDER]}
    )


def published_comparisons(records: Sequence[StockRecord], bins: TurnoverBins = DEFAULT_BINS) -> List[str]:
    """Lines pairing published figure values with the computed ones, where comparable."""
    lines = []
    yearly = yearly_average_turnover(records) if records else pd.DataFrame(columns=["company", "year"])
    for (company, year), expected in EXPECTED_YEARLY_MEANS.items():
        match = yearly[(yearly["company"] == company) & (yearly["year"] == year)]
        if not match.empty:
            computed = float(match["mean_turnover"].iloc[0])
            lines.append(f"{company} {year} average turnover: {computed:,.0f} (published {expected:,.0f})")
    sums = shares_sum_by_class(records, bins)
    for cls, expected in EXPECTED_SHARES_BY_CLASS.items():
        if sums[cls] > 0:
            lines.append(f"class {cls.name} shares: {sums[cls]:,.0f} (published {expected:,.0f})")
    return lines


@dataclass(frozen=True)
class SyntheticSpec:
    n_rows: int = 2000
    n_informative: int = 10
    n_noise: int = 10
    class_count: int = N_CLASSES
    noise_level: float = 0.1
    seed: int = 1

    def __post_init__(self):
        if self.n_rows < 1:
            raise DomainError(f"n_rows must be positive, got {self.n_rows}")
        if self.n_informative < 1:
            raise DomainError("n_informative must be at least 1")
        if self.n_noise < 0:
            raise DomainError("n_noise must be non-negative")
        if self.class_count != N_CLASSES:
            raise DomainError(f"class_count must be {N_CLASSES}")
        if not 0.0 <= self.noise_level < 1.0:
            raise DomainError(f"noise_level must be in [0, 1), got {self.noise_level}")
        validate_seed(self.seed)

    def feature_names(self) -> Tuple[str, ...]:
        return tuple(f"informative_{k}" for k in range(self.n_informative)) + tuple(
            f"noise_{k}" for k in range(self.n_noise)
        )


# Strictly monotone, strongly curved maps of the latent score in [0, 5].
_TRANSFORMS = (
    lambda v: np.exp(1.5 * v),
    lambda v: np.exp(1.5 * (5.0 - v)),
    lambda v: np.sign(v) * np.abs(v) ** 5,
    lambda v: np.tanh(2.0 * (v - 2.5)),
    lambda v: np.log1p(np.exp(3.0 * (v - 4.0))),
    lambda v: 1.0 / (1.0 + np.exp(-4.0 * (v - 1.0))),
    lambda v: np.sign(v - 2.5) * np.abs(v - 2.5) ** 3,
    lambda v: np.exp(-1.2 * v),
    lambda v: np.arctan(3.0 * (v - 3.5)),
    lambda v: np.cbrt(v - 0.5),
)


def generate_synthetic(spec: SyntheticSpec) -> Tuple[List[StockRecord], LabeledDataset]:
    """
    Draw labelled BSE-shaped records.

    Each row picks a class uniformly and a position inside that class's
    turnover band; the latent score ``class + position`` drives the
    informative features through curved monotone maps with Gaussian noise of
    scale ``noise_level``. Noise features are independent standard normals.
    Prices, shares and spreads are drawn consistent with the record rules.
    """
    rng = make_rng(spec.seed, "synthetic")
    n = spec.n_rows
    classes = rng.integers(0, N_CLASSES, size=n)
    position = rng.uniform(0.05, 0.95, size=n)
    latent = classes + position

    columns = []
    for k in range(spec.n_informative):
        noisy = latent + spec.noise_level * rng.standard_normal(n)
        columns.append(_TRANSFORMS[k % len(_TRANSFORMS)](noisy))
    for _ in range(spec.n_noise):
        columns.append(rng.standard_normal(n))
    matrix = np.column_stack(columns)
    names = spec.feature_names()

    bounds = np.asarray(DEFAULT_BINS.boundaries)
    lo, hi = bounds[classes, 0], bounds[classes, 1]
    turnover = np.round(lo * (hi / lo) ** position)

    start = date(2005, 1, 1)
    day_offsets = rng.integers(0, 11 * 365, size=n)
    companies = rng.integers(0, len(SYNTHETIC_COMPANIES), size=n)
    wap = np.round(rng.uniform(50.0, 2000.0, size=n), 2)
    low = np.round(wap * (1.0 - rng.uniform(0.0, 0.05, size=n)), 2)
    high = np.round(wap * (1.0 + rng.uniform(0.0, 0.05, size=n)), 2)
    low = np.minimum(low, wap)
    high = np.maximum(high, wap)
    open_price = np.round(rng.uniform(low, high), 2)
    close_price = np.round(rng.uniform(low, high), 2)
    shares = np.maximum(1.0, np.round(turnover / wap))
    deliverable = np.floor(shares * rng.uniform(0.2, 0.9, size=n))
    trades = np.maximum(1.0, np.round(shares / rng.uniform(50.0, 500.0, size=n)))

    records = []
    for i in range(n):
        records.append(
            StockRecord(
                date=start + timedelta(days=int(day_offsets[i])),
                company=SYNTHETIC_COMPANIES[int(companies[i])],
                open_price=float(open_price[i]),
                high_price=float(high[i]),
                low_price=float(low[i]),
                close_price=float(close_price[i]),
                wap=float(wap[i]),
                no_of_shares=float(shares[i]),
                no_of_trades=float(trades[i]),
                deliverable_quantity=float(deliverable[i]),
                spread_high_low=float(high[i] - low[i]),
                spread_close_open=float(close_price[i] - open_price[i]),
                total_turnover=float(turnover[i]),
                extras=tuple((name, float(matrix[i, j])) for j, name in enumerate(names)),
            )
        )
    labels = [discretize_turnover(r.total_turnover) for r in records]
    if any(int(a) != int(b) for a, b in zip(labels, classes)):
        raise DomainError("synthetic turnover left its class band")
    logger.info("generated %d synthetic rows with %d features", n, len(names))
    return records, LabeledDataset(names, matrix, labels)
