"""Differentiable training objective: cost-adjusted returns and Sharpe loss.

The loss of a window is the negated per-period Sharpe ratio of the net
portfolio returns. Net returns subtract a proportional transaction cost on
turnover, where the position before the first row of a window is taken from
``ReturnsWindow.prev_weights`` (an all-cash zero book by default).

Annualization is intentionally absent here: it is a constant factor that
cannot move the optimum, so it lives with the backtest statistics instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import ptopt.autograd as ag
from ptopt.autograd import ContractError, ShapeError, Tensor
from ptopt.errors import DataError

EPS = 1e-12


@dataclass(frozen=True)
class CostModel:
    """Proportional transaction cost per unit of turnover."""

    cost_rate: float = 0.0002

    def __post_init__(self):
        if self.cost_rate < 0:
            raise ValueError(f"cost_rate must be non-negative, got {self.cost_rate}")


@dataclass
class ReturnsWindow:
    """Realized next-day returns aligned with the weights that earn them.

    ``realized[t]`` accrues to weight row t; turnover of row 0 is charged
    against ``prev_weights`` (zero book when omitted).
    """

    realized: np.ndarray
    prev_weights: np.ndarray | None = None

    def __post_init__(self):
        self.realized = np.asarray(self.realized, dtype=np.float64)
        if self.realized.ndim != 2:
            raise ShapeError(f"realized must be a (days, assets) matrix, got shape {self.realized.shape}")
        if self.prev_weights is not None:
            self.prev_weights = np.asarray(self.prev_weights, dtype=np.float64)
            if self.prev_weights.shape != (self.realized.shape[1],):
                raise ShapeError(
                    f"prev_weights shape {self.prev_weights.shape} does not match "
                    f"{self.realized.shape[1]} assets"
                )


def arithmetic_return(p_now: float, p_prev: float) -> float:
    """Simple return between two consecutive prices."""
    if p_prev <= 0:
        raise DataError(f"previous price must be positive, got {p_prev}")
    return p_now / p_prev - 1.0


def portfolio_returns(weights: Tensor, window: ReturnsWindow, costs: CostModel) -> Tensor:
    """Net daily portfolio returns for a window of weight rows.

    Row t contributes sum(weights[t] * realized[t]) minus ``cost_rate`` times
    the L1 distance between weight row t and the previous row.
    """
    if weights.data.ndim != 2:
        raise ShapeError(f"weights must be a (days, assets) matrix, got shape {weights.shape}")
    t, n = weights.shape
    if window.realized.shape != (t, n):
        raise ShapeError(f"returns shape {window.realized.shape} does not match weights {weights.shape}")
    prev0 = window.prev_weights if window.prev_weights is not None else np.zeros(n)

    gross = ag.reduce_sum(ag.mul(weights, Tensor(window.realized)), axis=1)
    first = Tensor(prev0.reshape(1, n))
    prev = ag.concat([first, ag.slice_(weights, 0, 0, t - 1)], axis=0) if t > 1 else first
    turnover = ag.reduce_sum(ag.absolute(ag.sub(weights, prev)), axis=1)
    return ag.sub(gross, turnover * costs.cost_rate)


def sharpe(returns: Tensor, eps: float = EPS) -> Tensor:
    """Per-period Sharpe ratio with an eps-guarded variance."""
    if returns.data.ndim != 1 or returns.size < 2:
        raise ContractError(f"sharpe needs a vector of at least 2 returns, got shape {returns.shape}")
    m = ag.mean(returns)
    var = ag.sub(ag.mean(ag.mul(returns, returns)), ag.mul(m, m))
    return ag.div(m, ag.sqrt(var + eps))


def sharpe_loss(weights: Tensor, window: ReturnsWindow, costs: CostModel, eps: float = EPS) -> Tensor:
    """Negated Sharpe of the cost-adjusted window returns (to be minimized)."""
    return -sharpe(portfolio_returns(weights, window, costs), eps)
