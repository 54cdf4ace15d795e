"""Tests for CSV parsing, missing-value removal, encoding and the train/validation split."""

from collections import Counter

import numpy as np
import pytest

from conftest import BSE_HEADER, bse_csv, bse_row, make_record
from data_model import LabeledDataset, TurnoverClass
from ingestion import (
    ParseError,
    RawTable,
    SchemaError,
    SplitConfig,
    VocabularyError,
    dataset_from_frame,
    dataset_to_frame,
    drop_missing,
    encode_features,
    encode_table_rows,
    parse_csv,
    parse_number,
    records_from_table,
    split_train_validation,
)


def test_parse_table1_header_with_two_rows():
    table = parse_csv(bse_csv([bse_row(3), bse_row(4)]).encode("utf-8"))
    assert table.n_rows == 2
    assert "wap" in table.header and "total_turnover" in table.header
    assert table.warnings == ()


def test_header_matching_ignores_case_and_spacing():
    header = BSE_HEADER.upper().replace(",", " , ")
    table = parse_csv(header + "\n" + bse_row() + "\n")
    assert set(table.header) >= {"open_price", "no_of_shares", "spread_close_open", "company"}


def test_missing_wap_column_is_a_schema_error():
    header = BSE_HEADER.replace("WAP,", "")
    with pytest.raises(SchemaError, match="missing column WAP"):
        parse_csv(header + "\n")


def test_short_row_is_a_parse_error_with_row_number():
    short = ",".join(bse_row().split(",")[:12])
    with pytest.raises(ParseError) as excinfo:
        parse_csv(bse_csv([bse_row(), short]))
    assert excinfo.value.row == 2


def test_unknown_columns_are_kept_and_flagged():
    text = BSE_HEADER + ",Sector\n" + bse_row() + ",Health\n"
    table = parse_csv(text)
    assert table.header[-1] == "Sector"
    assert table.column("Sector") == ["Health"]
    assert len(table.warnings) == 1


def test_drop_missing_counts_and_preserves_order():
    rows = [bse_row(day) for day in range(1, 11)]
    for index, literal in ((1, ""), (4, "NA"), (7, "-")):
        cells = rows[index].split(",")
        cells[5] = literal
        rows[index] = ",".join(cells)
    table, dropped = drop_missing(parse_csv(bse_csv(rows)))
    assert dropped == 3
    assert table.n_rows == 7
    days = [cell.split("-")[0] for cell in table.column("date")]
    assert days == ["01", "03", "04", "06", "07", "09", "10"]


def test_drop_missing_on_empty_and_clean_tables():
    empty = RawTable(("a",), ())
    assert drop_missing(empty) == (empty, 0)
    clean = parse_csv(bse_csv([bse_row(day) for day in range(1, 11)]))
    kept, dropped = drop_missing(clean)
    assert dropped == 0 and kept.cells == clean.cells


def test_parse_number_strips_thousands_separators():
    assert parse_number("1,234,567") == 1234567.0
    with pytest.raises(ValueError):
        parse_number("inf")


def test_records_from_table_separates_invalid_rows():
    bad = bse_row(5, shares=100_000).replace(",120000,", ",150000,")
    table = parse_csv(bse_csv([bse_row(3), bse_row(4, shares=100_000).replace(",120000,", ",90000,"), bad]))
    records, invalid = records_from_table(table)
    assert len(records) == 2
    assert [row for row, _ in invalid] == [3]
    assert records[0].company == "Apollo"


def test_four_companies_give_fourteen_columns():
    records = [make_record(company=c) for c in ("Infosys", "Sintex", "HDFC", "Apollo")]
    d = encode_features(records)
    assert d.n_features == 14
    dummies = d.rows[:, 10:]
    assert dummies.sum(axis=1).tolist() == [1.0] * 4
    assert d.feature_names[10:] == ("company=Apollo", "company=HDFC", "company=Infosys", "company=Sintex")
    assert "total_turnover" not in d.feature_names and "date" not in d.feature_names


def test_one_company_gives_all_ones_indicator():
    d = encode_features([make_record(), make_record(total_turnover=58_320.0)])
    assert d.n_features == 11
    assert d.rows[:, -1].tolist() == [1.0, 1.0]
    assert d.label_classes() == [TurnoverClass.B, TurnoverClass.A]


def test_encode_rejects_empty_list():
    with pytest.raises(ValueError):
        encode_features([])


def test_exclusions_are_configurable():
    d = encode_features([make_record()], exclude=("total_turnover",))
    assert "date" in d.feature_names
    assert d.rows[0, d.feature_names.index("date")] == make_record().date.toordinal()


def test_prediction_rows_reject_unknown_company():
    d = encode_features([make_record(company="Apollo"), make_record(company="HDFC")])
    table = parse_csv(bse_csv([bse_row(company="HDFC")]))
    matrix = encode_table_rows(table, d.feature_names)
    assert matrix[0, d.feature_names.index("company=HDFC")] == 1.0
    unknown = parse_csv(bse_csv([bse_row(company="Wipro")]))
    with pytest.raises(VocabularyError, match="Apollo, HDFC"):
        encode_table_rows(unknown, d.feature_names)


def _dataset(labels):
    labels = list(labels)
    rows = np.arange(len(labels) * 2, dtype=float).reshape(len(labels), 2)
    return LabeledDataset(("f0", "f1"), rows, labels)


def test_split_sizes_and_partition():
    d = _dataset([i % 5 for i in range(100)])
    train, valid = split_train_validation(d, SplitConfig(seed=3))
    assert (train.n_rows, valid.n_rows) == (60, 40)
    combined = sorted(map(tuple, np.vstack([train.rows, valid.rows]).tolist()))
    assert combined == sorted(map(tuple, d.rows.tolist()))


def test_split_is_deterministic_for_a_seed():
    d = _dataset([0] * 10)
    first = split_train_validation(d, SplitConfig(seed=7))
    second = split_train_validation(d, SplitConfig(seed=7))
    np.testing.assert_array_equal(first[0].rows, second[0].rows)
    assert first[0].n_rows == 6


def test_stratified_shares_follow_class_counts():
    d = _dataset([0] * 20 + [1] * 30)
    train, _ = split_train_validation(d, SplitConfig(seed=1))
    counts = Counter(train.labels.tolist())
    assert abs(counts[0] - 12) <= 1 and abs(counts[1] - 18) <= 1
    assert train.n_rows == 30


def test_singleton_class_goes_to_training():
    d = _dataset([0] * 9 + [4])
    train, valid = split_train_validation(d, SplitConfig(seed=2))
    assert 4 in train.labels.tolist()
    assert 4 not in valid.labels.tolist()
    assert train.n_rows == 6


def test_sequential_split_takes_leading_rows():
    d = _dataset([0, 0, 1, 1, 2, 2, 3, 3, 4, 4])
    train, valid = split_train_validation(d, SplitConfig(strategy="sequential"))
    assert train.labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert valid.labels.tolist() == [3, 3, 4, 4]


def test_different_seeds_give_different_splits():
    d = _dataset([i % 2 for i in range(20)])
    differing = 0
    for pair in range(100):
        a, _ = split_train_validation(d, SplitConfig(seed=2 * pair))
        b, _ = split_train_validation(d, SplitConfig(seed=2 * pair + 1))
        differing += not np.array_equal(a.rows, b.rows)
    assert differing >= 99


def test_split_config_validation():
    with pytest.raises(ValueError):
        SplitConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        SplitConfig(strategy="kfold")


def test_dataset_frame_roundtrip_keeps_labels():
    d = _dataset([0, 3, 4])
    back = dataset_from_frame(dataset_to_frame(d))
    assert back.feature_names == d.feature_names
    assert back.labels.tolist() == [0, 3, 4]
