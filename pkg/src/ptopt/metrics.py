"""Backtest simulation and out-of-sample performance statistics.

The seven report fields are annualized return, annualized volatility,
Sharpe, Sortino, maximum drawdown, Calmar, and the fraction of strictly
positive days. Annualization uses 252 trading days; standard deviations are
population form. Degenerate ratios (zero dispersion, zero drawdown) are
reported as signed infinities rather than raised, since tiny synthetic
backtests legitimately produce them.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ptopt.autograd import ContractError
from ptopt.data import ReturnTable
from ptopt.errors import AlignmentError, DataError
from ptopt.objective import CostModel

TRADING_DAYS = 252


@dataclass
class EquityCurve:
    """Dated stream of realized net daily returns plus its running product."""

    dates: list[dt.date]
    daily_returns: np.ndarray

    def __post_init__(self):
        self.daily_returns = np.asarray(self.daily_returns, dtype=np.float64)
        if len(self.dates) != len(self.daily_returns):
            raise DataError("dates and daily_returns lengths differ")
        if np.any(self.daily_returns <= -1):
            raise DataError("daily return <= -100% is not representable as equity")
        self.cumulative = np.cumprod(1.0 + self.daily_returns)


@dataclass(frozen=True)
class MetricsReport:
    returns: float
    vol: float
    sharpe: float
    sortino: float
    mdd: float
    calmar: float
    pct_positive: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class WeightStream:
    """Daily allocation decisions; row t is the book held after day t's close."""

    dates: list[dt.date]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.dates):
            raise DataError(f"weight matrix shape {self.weights.shape} does not match {len(self.dates)} dates")


def _ratio_or_sentinel(numerator: float, denominator: float, annualize: float = 1.0) -> float:
    if denominator == 0.0:
        return math.inf if numerator >= 0 else -math.inf
    return numerator / denominator * annualize


def max_drawdown(cumulative: np.ndarray) -> float:
    """Largest peak-to-trough fraction, with starting capital 1 as a peak."""
    levels = np.concatenate([[1.0], np.asarray(cumulative, dtype=np.float64)])
    peaks = np.maximum.accumulate(levels)
    return float(np.max(1.0 - levels / peaks))


def compute_metrics(curve: EquityCurve) -> MetricsReport:
    r = curve.daily_returns
    if r.size < 2:
        raise ContractError(f"need at least 2 daily returns, got {r.size}")
    mean = float(r.mean())
    sd = float(r.std())
    ann_return = mean * TRADING_DAYS
    root_days = math.sqrt(TRADING_DAYS)
    downside = float(np.sqrt(np.mean(np.minimum(r, 0.0) ** 2)))
    mdd = max_drawdown(curve.cumulative)
    return MetricsReport(
        returns=ann_return,
        vol=sd * root_days,
        sharpe=_ratio_or_sentinel(mean, sd, root_days),
        sortino=_ratio_or_sentinel(mean, downside, root_days),
        mdd=mdd,
        calmar=_ratio_or_sentinel(ann_return, mdd),
        pct_positive=float(np.mean(r > 0)),
    )


def rolling_sharpe(curve: EquityCurve, window: int = TRADING_DAYS) -> tuple[list[dt.date], np.ndarray]:
    """Annualized Sharpe over each trailing ``window`` of daily returns."""
    r = curve.daily_returns
    if r.size < window:
        raise ContractError(f"curve length {r.size} shorter than window {window}")
    root_days = math.sqrt(TRADING_DAYS)
    values = np.empty(r.size - window + 1)
    for i in range(values.size):
        chunk = r[i : i + window]
        values[i] = _ratio_or_sentinel(float(chunk.mean()), float(chunk.std()), root_days)
    return curve.dates[window - 1 :], values


def run_backtest(stream: WeightStream, table: ReturnTable, costs: CostModel) -> EquityCurve:
    """Realize a weight stream against next-day returns under the cost model.

    The weight dated d is held over the following trading day and earns that
    day's returns; turnover is charged against the previous day's book, with
    an all-zero book before the first day.
    """
    if stream.weights.shape[1] != table.n_assets:
        raise AlignmentError(
            f"weight stream has {stream.weights.shape[1]} assets, return table {table.n_assets}"
        )
    index = {d: i for i, d in enumerate(table.dates)}
    rows = []
    for d in stream.dates:
        i = index.get(d)
        if i is None:
            raise AlignmentError(f"weight date {d} not present in the return table")
        if i + 1 >= len(table.dates):
            raise AlignmentError(f"no realized return after weight date {d}")
        rows.append(i)
    for prev_row, row, d in zip(rows, rows[1:], stream.dates[1:]):
        if row != prev_row + 1:
            raise AlignmentError(f"weight dates skip trading days before {d}")

    w = stream.weights
    realized = table.returns[[i + 1 for i in rows]]
    prev = np.vstack([np.zeros(table.n_assets), w[:-1]])
    net = (w * realized).sum(axis=1) - costs.cost_rate * np.abs(w - prev).sum(axis=1)
    earn_dates = [table.dates[i + 1] for i in rows]
    return EquityCurve(earn_dates, net)


# ---------------------------------------------------------------------------
# plot-ready serialization


def write_series_csv(dates: list[dt.date], values: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,value\n")
        for d, v in zip(dates, values):
            fh.write(f"{d.isoformat()},{float(v)!r}\n")


def write_equity_csv(curve: EquityCurve, path) -> None:
    write_series_csv(curve.dates, curve.cumulative, path)


def write_rolling_sharpe_csv(curve: EquityCurve, path, window: int = TRADING_DAYS) -> None:
    dates, values = rolling_sharpe(curve, window)
    write_series_csv(dates, values, path)
