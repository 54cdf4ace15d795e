"""
Record schema, turnover classes and dataset containers for turnover-forest

StockRecord mirrors one daily row of a BSE share-price export. TurnoverBins
holds the five published turnover bands and LabeledDataset is the numeric
matrix every model trains on.
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SPREAD_TOLERANCE = 1e-6
DATE_FORMATS = ("%Y-%m-%d", "%d-%B-%Y", "%d-%b-%Y")


class DomainError(ValueError):
    """Raised when an operation's precondition does not hold."""


class TurnoverClass(IntEnum):
    """Ordinal turnover band, A is the lowest."""

    A = 0
    B = 1
    C = 2
    D = 3
    E = 4

    @classmethod
    def from_label(cls, label: str) -> "TurnoverClass":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise DomainError(f"unknown turnover class {label!r}") from None


CLASS_ORDER: Tuple[TurnoverClass, ...] = tuple(TurnoverClass)
N_CLASSES = len(CLASS_ORDER)


@dataclass(frozen=True)
class TurnoverBins:
    """Five closed [lo, hi] currency intervals, one per class A..E."""

    boundaries: Tuple[Tuple[float, float], ...] = (
        (58_320.0, 18_291_986.0),
        (18_296_597.0, 37_731_606.0),
        (37_749_751.0, 121_233_543.0),
        (121_245_870.0, 300_360_881.0),
        (300_465_316.0, 19_085_311_470.0),
    )

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.boundaries)
        if len(bounds) != N_CLASSES:
            raise DomainError(f"expected {N_CLASSES} bins, got {len(bounds)}")
        for lo, hi in bounds:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise DomainError(f"invalid bin [{lo}, {hi}]")
        for (_, prev_hi), (lo, _) in zip(bounds, bounds[1:]):
            if lo <= prev_hi:
                raise DomainError("bins must be disjoint and strictly increasing")
        object.__setattr__(self, "boundaries", bounds)

    def to_dict(self) -> Dict[str, List[float]]:
        return {cls.name: [lo, hi] for cls, (lo, hi) in zip(CLASS_ORDER, self.boundaries)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "TurnoverBins":
        return cls(tuple((float(data[c.name][0]), float(data[c.name][1])) for c in CLASS_ORDER))


DEFAULT_BINS = TurnoverBins()


def discretize_turnover(value: float, bins: TurnoverBins = DEFAULT_BINS) -> TurnoverClass:
    """
    Map a turnover amount onto its class.

    Values inside a published interval get that interval's class. Values in
    the gap between two intervals go to the nearer boundary (ties to the
    lower class); values outside the published range clamp to A or E.
    """
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"turnover must be finite and non-negative, got {value}")

    bounds = bins.boundaries
    if value < bounds[0][0]:
        return TurnoverClass.A
    for index, (lo, hi) in enumerate(bounds):
        if lo <= value <= hi:
            return CLASS_ORDER[index]
        if index + 1 < len(bounds) and hi < value < bounds[index + 1][0]:
            to_lower = value - hi
            to_upper = bounds[index + 1][0] - value
            return CLASS_ORDER[index] if to_lower <= to_upper else CLASS_ORDER[index + 1]
    return TurnoverClass.E


def parse_date(text: str) -> date:
    """Parse ISO-8601 or BSE style ``DD-Month-YYYY`` / ``DD-Mon-YYYY`` dates."""
    cleaned = text.strip()
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(cleaned, fmt).date()
        except ValueError:
            continue
    raise DomainError(f"unrecognised date {text!r}")


@dataclass(frozen=True)
class StockRecord:
    """One trading day of one company."""

    date: date
    company: str
    open_price: float
    high_price: float
    low_price: float
    close_price: float
    wap: float
    no_of_shares: float
    no_of_trades: float
    deliverable_quantity: float
    spread_high_low: float
    spread_close_open: float
    total_turnover: float
    # Extra numeric CSV columns kept for optional use as features.
    extras: Tuple[Tuple[str, float], ...] = field(default=())

    def extra(self, name: str) -> Optional[float]:
        for key, value in self.extras:
            if key == name:
                return value
        return None


NUMERIC_FIELDS: Tuple[str, ...] = (
    "open_price",
    "high_price",
    "low_price",
    "close_price",
    "wap",
    "no_of_shares",
    "no_of_trades",
    "deliverable_quantity",
    "spread_high_low",
    "spread_close_open",
)


def validate_record(record: StockRecord) -> List[str]:
    """Return one description per violated record invariant (empty when valid)."""
    violations = []
    r = record

    if not r.low_price <= r.high_price:
        violations.append(
            f"low_price ≤ high_price violated (low_price={r.low_price}, high_price={r.high_price})"
        )
    if not r.low_price <= r.wap <= r.high_price:
        violations.append(
            f"low_price ≤ wap ≤ high_price violated "
            f"(low_price={r.low_price}, wap={r.wap}, high_price={r.high_price})"
        )
    if not abs(r.spread_high_low - (r.high_price - r.low_price)) <= SPREAD_TOLERANCE:
        violations.append(
            f"spread_high_low = high_price − low_price violated "
            f"(spread_high_low={r.spread_high_low}, high_price − low_price={r.high_price - r.low_price})"
        )
    for name in ("no_of_shares", "no_of_trades", "deliverable_quantity", "total_turnover"):
        value = getattr(r, name)
        if not value >= 0:
            violations.append(f"{name} ≥ 0 violated ({name}={value})")
    if not r.deliverable_quantity <= r.no_of_shares:
        violations.append(
            f"deliverable_quantity ≤ no_of_shares violated "
            f"(deliverable_quantity={r.deliverable_quantity}, no_of_shares={r.no_of_shares})"
        )

    return violations


@dataclass(frozen=True)
class LabeledDataset:
    """Row-major feature matrix with one TurnoverClass label per row."""

    feature_names: Tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.feature_names)
        rows = np.array(self.rows, dtype=np.float64, copy=True)
        labels = np.array([int(label) for label in self.labels], dtype=np.int64)
        if rows.size == 0:
            rows = rows.reshape(len(labels), len(names))
        if rows.ndim != 2 or rows.shape[1] != len(names):
            raise DomainError(
                f"every row must have {len(names)} entries, got shape {rows.shape}"
            )
        if rows.shape[0] != labels.shape[0]:
            raise DomainError(f"{rows.shape[0]} rows but {labels.shape[0]} labels")
        if not np.all(np.isfinite(rows)):
            raise DomainError("feature values must be finite")
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise DomainError("labels must be TurnoverClass values")
        if len(set(names)) != len(names):
            raise DomainError("feature names must be unique")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def label_classes(self) -> List[TurnoverClass]:
        return [CLASS_ORDER[i] for i in self.labels]

    def class_histogram(self) -> Dict[str, int]:
        counts = np.bincount(self.labels, minlength=N_CLASSES)
        return {cls.name: int(counts[cls]) for cls in CLASS_ORDER}

    def subset(self, row_indices: Iterable[int]) -> "LabeledDataset":
        idx = np.asarray(list(row_indices), dtype=np.int64)
        return LabeledDataset(self.feature_names, self.rows[idx], self.labels[idx])

    def select_features(self, names: Sequence[str]) -> "LabeledDataset":
        positions = []
        for name in names:
            if name not in self.feature_names:
                raise DomainError(f"unknown feature {name!r}")
            positions.append(self.feature_names.index(name))
        return LabeledDataset(tuple(names), self.rows[:, positions], self.labels)
