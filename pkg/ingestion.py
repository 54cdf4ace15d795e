"""
BSE export ingestion for turnover-forest

Parses share-price CSV exports, removes incomplete records, one-hot encodes
the company, discretizes total turnover and splits the result into the
training (60%) and validation (40%) halves.
"""

import csv
import io
import logging
import math
import re
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from data_model import (
    CLASS_ORDER,
    DEFAULT_BINS,
    N_CLASSES,
    NUMERIC_FIELDS,
    DomainError,
    LabeledDataset,
    StockRecord,
    TurnoverBins,
    TurnoverClass,
    discretize_turnover,
    parse_date,
    validate_record,
)
from seeding import make_rng, validate_seed

logger = logging.getLogger(__name__)

MISSING_LITERALS = {"", "na", "n/a", "-"}
COMPANY_PREFIX = "company="
LABEL_COLUMN = "label"
DEFAULT_EXCLUSIONS = ("total_turnover", "date")
STRATEGIES = ("stratified_random", "sequential")

# Canonical field -> header shown in messages (BSE export spelling).
DISPLAY_NAMES: Dict[str, str] = {
    "date": "Date",
    "open_price": "Open Price",
    "high_price": "High Price",
    "low_price": "Low Price",
    "close_price": "Close Price",
    "wap": "WAP",
    "no_of_shares": "No.of Shares",
    "no_of_trades": "No. of Trades",
    "total_turnover": "Total Turnover",
    "deliverable_quantity": "Deliverable Quantity",
    "spread_high_low": "Spread High-Low",
    "spread_close_open": "Spread Close-Open",
    "company": "Company",
}

TABLE1_COLUMNS: Tuple[str, ...] = tuple(DISPLAY_NAMES)

_ALIASES: Dict[str, str] = {
    "weightedaverageprice": "wap",
    "open": "open_price",
    "high": "high_price",
    "low": "low_price",
    "close": "close_price",
    "totalturnoverrs": "total_turnover",
    "totalturnover": "total_turnover",
    "companyname": "company",
}


class SchemaError(DomainError):
    """A required column is missing from the CSV header."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing column {column}")


class ParseError(DomainError):
    """A data row cannot be parsed; ``row`` is 1-based over data rows."""

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class VocabularyError(DomainError):
    """A company name is not part of the training vocabulary."""

    def __init__(self, company: str, vocabulary: Sequence[str]):
        self.company = company
        self.vocabulary = list(vocabulary)
        super().__init__(
            f"unknown company {company!r}; known companies: {', '.join(self.vocabulary) or '(none)'}"
        )


def _normalize(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


_CANONICAL: Dict[str, str] = {_normalize(display): key for key, display in DISPLAY_NAMES.items()}
_CANONICAL.update({_normalize(key): key for key in DISPLAY_NAMES})
_CANONICAL.update(_ALIASES)


def canonical_column(name: str) -> Optional[str]:
    """Canonical field name for a header cell, or None for an unknown column."""
    return _CANONICAL.get(_normalize(name))


@dataclass(frozen=True)
class RawTable:
    """Header plus cell grid; missing cells are None."""

    header: Tuple[str, ...]
    cells: Tuple[Tuple[Optional[str], ...], ...]
    warnings: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        for index, row in enumerate(self.cells, start=1):
            if len(row) != len(self.header):
                raise ParseError(index, f"expected {len(self.header)} cells, got {len(row)}")

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    def column(self, name: str) -> List[Optional[str]]:
        position = self.header.index(name)
        return [row[position] for row in self.cells]


def _is_missing(cell: Optional[str]) -> bool:
    return cell is None or cell.strip().lower() in MISSING_LITERALS


def _open_text(source: Union[bytes, str, BinaryIO, TextIO]) -> TextIO:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8-sig"))
    if isinstance(source, str):
        return io.StringIO(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    return io.StringIO(data)


def parse_csv(
    source: Union[bytes, str, BinaryIO, TextIO],
    schema: Sequence[str] = TABLE1_COLUMNS,
) -> RawTable:
    """
    Parse CSV text into a RawTable keyed by canonical column names.

    Header matching ignores case, whitespace and punctuation. Columns outside
    the known schema are kept under their original header and reported in
    ``warnings``. Missing literals (empty, NA, N/A, -) become None.
    """
    reader = csv.reader(_open_text(source))
    try:
        raw_header = next(reader)
    except StopIteration:
        raise SchemaError(DISPLAY_NAMES.get(schema[0], schema[0]) if schema else "header") from None

    header: List[str] = []
    warnings: List[str] = []
    for cell in raw_header:
        canonical = canonical_column(cell)
        if canonical is None:
            name = cell.strip()
            header.append(name)
            message = f"unknown column {name!r} retained"
            warnings.append(message)
            logger.warning(message)
        else:
            header.append(canonical)

    for required in schema:
        if required not in header:
            raise SchemaError(DISPLAY_NAMES.get(required, required))

    rows: List[Tuple[Optional[str], ...]] = []
    data_row = 0
    for raw in reader:
        if not raw or all(not cell.strip() for cell in raw) and len(raw) <= 1:
            continue
        data_row += 1
        if len(raw) != len(header):
            raise ParseError(data_row, f"expected {len(header)} cells, got {len(raw)}")
        rows.append(tuple(None if _is_missing(cell) else cell.strip() for cell in raw))

    return RawTable(tuple(header), tuple(rows), tuple(warnings))


def drop_missing(table: RawTable) -> Tuple[RawTable, int]:
    """Remove every row with at least one missing cell; returns (table, dropped)."""
    kept = tuple(row for row in table.cells if not any(_is_missing(cell) for cell in row))
    dropped = table.n_rows - len(kept)
    if dropped:
        logger.info("dropped %d of %d rows with missing values", dropped, table.n_rows)
    return RawTable(table.header, kept, table.warnings), dropped


def parse_number(text: str) -> float:
    """Parse a numeric cell, stripping thousands separators."""
    value = float(text.replace(",", "").strip())
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {text!r}")
    return value


def records_from_table(
    table: RawTable,
    extra_columns: Sequence[str] = (),
) -> Tuple[List[StockRecord], List[Tuple[int, List[str]]]]:
    """
    Convert a cleaned RawTable into StockRecords.

    Returns the valid records and, for every record that fails
    validate_record, its 1-based row number with the violations.
    """
    positions = {name: table.header.index(name) for name in table.header}
    for name in extra_columns:
        if name not in positions:
            raise SchemaError(name)

    records: List[StockRecord] = []
    invalid: List[Tuple[int, List[str]]] = []
    for row_number, row in enumerate(table.cells, start=1):
        try:
            values = {name: parse_number(row[positions[name]]) for name in NUMERIC_FIELDS}
            turnover = parse_number(row[positions["total_turnover"]])
            extras = tuple((name, parse_number(row[positions[name]])) for name in extra_columns)
            record = StockRecord(
                date=parse_date(row[positions["date"]]),
                company=row[positions["company"]].strip(),
                total_turnover=turnover,
                extras=extras,
                **values,
            )
        except (ValueError, TypeError, AttributeError) as exc:
            raise ParseError(row_number, str(exc)) from exc

        violations = validate_record(record)
        if violations:
            for violation in violations:
                logger.warning("row %d dropped: %s", row_number, violation)
            invalid.append((row_number, violations))
            continue
        records.append(record)

    return records, invalid


def company_vocabulary(feature_names: Sequence[str]) -> List[str]:
    return [name[len(COMPANY_PREFIX):] for name in feature_names if name.startswith(COMPANY_PREFIX)]


def feature_columns(
    companies: Sequence[str],
    exclude: Sequence[str] = DEFAULT_EXCLUSIONS,
    extra_columns: Sequence[str] = (),
) -> Tuple[str, ...]:
    """Encoded feature names: Table-1 numerics, optional date/turnover, extras, company dummies."""
    excluded = set(exclude)
    names = [name for name in NUMERIC_FIELDS if name not in excluded]
    if "date" not in excluded:
        names.append("date")
    if "total_turnover" not in excluded:
        names.append("total_turnover")
    names.extend(name for name in extra_columns if name not in excluded)
    if "company" not in excluded:
        names.extend(f"{COMPANY_PREFIX}{company}" for company in sorted(set(companies)))
    return tuple(names)


def _record_value(record: StockRecord, name: str) -> float:
    if name == "date":
        return float(record.date.toordinal())
    if name in NUMERIC_FIELDS or name == "total_turnover":
        return float(getattr(record, name))
    value = record.extra(name)
    if value is None:
        raise DomainError(f"record has no value for feature {name!r}")
    return value


def encode_features(
    records: Sequence[StockRecord],
    bins: TurnoverBins = DEFAULT_BINS,
    exclude: Sequence[str] = DEFAULT_EXCLUSIONS,
    extra_columns: Sequence[str] = (),
) -> LabeledDataset:
    """
    Build the numeric dataset: one column per numeric attribute, one 0/1
    ``company=<name>`` indicator per distinct company, label from turnover.
    """
    if not records:
        raise DomainError("cannot encode an empty record list")

    names = feature_columns([r.company for r in records], exclude, extra_columns)
    rows = np.zeros((len(records), len(names)), dtype=np.float64)
    for i, record in enumerate(records):
        for j, name in enumerate(names):
            if name.startswith(COMPANY_PREFIX):
                rows[i, j] = 1.0 if name[len(COMPANY_PREFIX):] == record.company else 0.0
            else:
                rows[i, j] = _record_value(record, name)
    labels = [discretize_turnover(r.total_turnover, bins) for r in records]
    return LabeledDataset(names, rows, labels)


def encode_table_rows(
    table: RawTable,
    feature_names: Sequence[str],
    vocabulary: Sequence[str] = (),
) -> np.ndarray:
    """
    Encode rows of a prediction CSV onto an existing feature space.

    Raises VocabularyError for a company outside the trained vocabulary,
    which defaults to the companies named by the indicator columns.
    """
    vocabulary = list(vocabulary) or company_vocabulary(feature_names)
    matrix = np.zeros((table.n_rows, len(feature_names)), dtype=np.float64)
    check_company = bool(vocabulary)
    for i, row in enumerate(table.cells, start=1):
        cells = dict(zip(table.header, row))
        company = (cells.get("company") or "").strip()
        if check_company and company not in vocabulary:
            raise VocabularyError(company, vocabulary)
        for j, name in enumerate(feature_names):
            try:
                if name.startswith(COMPANY_PREFIX):
                    matrix[i - 1, j] = 1.0 if name[len(COMPANY_PREFIX):] == company else 0.0
                elif name == "date":
                    matrix[i - 1, j] = float(parse_date(cells["date"]).toordinal())
                else:
                    matrix[i - 1, j] = parse_number(cells[name])
            except KeyError:
                raise SchemaError(DISPLAY_NAMES.get(name, name)) from None
            except (ValueError, TypeError, AttributeError) as exc:
                raise ParseError(i, str(exc)) from exc
    return matrix


@dataclass(frozen=True)
class SplitConfig:
    """Train/validation split settings; 60/40 by default."""

    train_fraction: float = 0.6
    seed: int = 0
    strategy: str = "stratified_random"

    def __post_init__(self):
        if not 0.0 < float(self.train_fraction) < 1.0:
            raise DomainError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.strategy not in STRATEGIES:
            raise DomainError(f"unknown split strategy {self.strategy!r}; expected one of {STRATEGIES}")
        validate_seed(self.seed)


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _stratified_quotas(counts: Dict[int, int], fraction: float, target: int) -> Dict[int, int]:
    """Largest-remainder apportionment of ``target`` train rows across classes."""
    quotas = {k: fraction * n for k, n in counts.items()}
    alloc = {k: int(math.floor(q)) for k, q in quotas.items()}
    deficit = target - sum(alloc.values())
    remainders = sorted(counts, key=lambda k: (-(quotas[k] - alloc[k]), k))
    while deficit > 0:
        progressed = False
        for k in remainders:
            if deficit == 0:
                break
            if alloc[k] < counts[k]:
                alloc[k] += 1
                deficit -= 1
                progressed = True
        if not progressed:
            break
    while deficit < 0:
        progressed = False
        for k in reversed(remainders):
            if deficit == 0:
                break
            if alloc[k] > 0:
                alloc[k] -= 1
                deficit += 1
                progressed = True
        if not progressed:
            break
    return alloc


def split_train_validation(d: LabeledDataset, cfg: SplitConfig) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Split ``d`` into training and validation halves.

    ``stratified_random`` keeps each class's training share within one row of
    ``train_fraction``; ``sequential`` takes the leading rows in their current
    order. Row order inside each half follows the input order.
    """
    n = d.n_rows
    if n < 2:
        raise DomainError(f"need at least 2 rows to split, got {n}")
    target = _round_half_up(cfg.train_fraction * n)

    if cfg.strategy == "sequential":
        train_idx = np.arange(target)
    else:
        if n < 5 or len(set(d.labels.tolist())) < 2:
            logger.warning("stratified split on %d rows with %d distinct labels",
                           n, len(set(d.labels.tolist())))
        rng = make_rng(cfg.seed, "split")
        by_class = {k: np.flatnonzero(d.labels == k) for k in range(N_CLASSES)}
        by_class = {k: idx for k, idx in by_class.items() if idx.size}

        chosen: List[np.ndarray] = []
        singletons = [k for k, idx in by_class.items() if idx.size == 1]
        for k in singletons:
            logger.warning("class %s has a single row; assigned to training", CLASS_ORDER[k].name)
            chosen.append(by_class.pop(k))

        counts = {k: int(idx.size) for k, idx in by_class.items()}
        quotas = _stratified_quotas(counts, cfg.train_fraction, max(target - len(singletons), 0))
        for k in sorted(by_class):
            permuted = rng.permutation(by_class[k])
            chosen.append(permuted[:quotas[k]])
        train_idx = np.sort(np.concatenate(chosen)) if chosen else np.arange(0)

    mask = np.zeros(n, dtype=bool)
    mask[train_idx] = True
    train = d.subset(np.flatnonzero(mask))
    valid = d.subset(np.flatnonzero(~mask))
    logger.info("split %d rows into %d train / %d valid (%s)", n, train.n_rows, valid.n_rows, cfg.strategy)
    return train, valid


def dataset_to_frame(d: LabeledDataset) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(d.rows), columns=list(d.feature_names))
    frame[LABEL_COLUMN] = [c.name for c in d.label_classes()]
    return frame


def dataset_from_frame(frame: pd.DataFrame) -> LabeledDataset:
    if LABEL_COLUMN not in frame.columns:
        raise SchemaError(LABEL_COLUMN)
    names = [c for c in frame.columns if c != LABEL_COLUMN]
    labels = [TurnoverClass.from_label(str(v)) for v in frame[LABEL_COLUMN]]
    rows = frame[names].to_numpy(dtype=np.float64) if names else np.zeros((len(frame), 0))
    return LabeledDataset(tuple(names), rows, labels)


def records_to_frame(records: Iterable[StockRecord]) -> pd.DataFrame:
    """Cleaned records in BSE column spelling, ready for clean.csv."""
    rows = []
    for r in records:
        row = {DISPLAY_NAMES["date"]: r.date.isoformat(), DISPLAY_NAMES["company"]: r.company}
        for name in NUMERIC_FIELDS + ("total_turnover",):
            row[DISPLAY_NAMES[name]] = getattr(r, name)
        for name, value in r.extras:
            row[name] = value
        rows.append(row)
    return pd.DataFrame(rows)
