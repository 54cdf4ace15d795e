"""Shared fixtures for the turnover-forest tests."""

from datetime import date

import numpy as np
import pytest

from data_model import LabeledDataset, StockRecord

BSE_HEADER = (
    "Date,Open Price,High Price,Low Price,Close Price,WAP,No.of Shares,No. of Trades,"
    "Total Turnover,Deliverable Quantity,Spread High-Low,Spread Close-Open,Company"
)


def make_record(**overrides) -> StockRecord:
    values = dict(
        date=date(2013, 6, 3),
        company="Apollo",
        open_price=100.0,
        high_price=110.0,
        low_price=95.0,
        close_price=105.0,
        wap=102.0,
        no_of_shares=200_000.0,
        no_of_trades=1_500.0,
        deliverable_quantity=120_000.0,
        spread_high_low=15.0,
        spread_close_open=5.0,
        total_turnover=20_400_000.0,
    )
    values.update(overrides)
    return StockRecord(**values)


def bse_row(day: int = 3, company: str = "Apollo", turnover: float = 20_400_000.0, shares: float = 200_000.0) -> str:
    return (
        f"{day:02d}-June-2013,100,110,95,105,102,{shares:.0f},1500,{turnover:.0f},"
        f"120000,15,5,{company}"
    )


def bse_csv(rows) -> str:
    return "\n".join([BSE_HEADER, *rows]) + "\n"


@pytest.fixture
def make_stock_record():
    return make_record


@pytest.fixture
def labelled_blobs():
    """Five well separated classes on two informative features plus one noise column."""
    rng = np.random.default_rng(7)
    labels = np.repeat(np.arange(5), 40)
    informative = labels[:, None] * 3.0 + rng.normal(0.0, 0.3, size=(200, 2))
    noise = rng.normal(size=(200, 1))
    return LabeledDataset(("x0", "x1", "noise"), np.hstack([informative, noise]), labels)
