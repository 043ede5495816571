"""Attention-based daily asset allocation with a cost-aware Sharpe objective.

Subpackage map:

* :mod:`ptopt.autograd` -- tape-based reverse-mode tensor engine
* :mod:`ptopt.model` -- encoder-decoder attention allocation network
* :mod:`ptopt.objective` -- cost-adjusted Sharpe training loss
* :mod:`ptopt.training` -- Adam, early stopping, grid search, walk-forward
* :mod:`ptopt.benchmarks` -- mean-variance, MLP, LSTM, equal-weight strategies
* :mod:`ptopt.metrics` -- backtest simulation and performance statistics
* :mod:`ptopt.data` -- CSV price IO, return construction, synthetic prices
* :mod:`ptopt.cli` -- ``ptopt`` command line entry point
"""

__version__ = "0.1.0"
