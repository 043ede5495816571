"""Baseline allocation strategies: mean-variance, MLP, LSTM, equal weight.

The neural baselines share the allocation head and Sharpe objective of the
attention model, so performance differences isolate the architecture. The
mean-variance rule is the classical two-step estimate-then-optimize
portfolio: tangency direction of trailing sample moments, normalized to
unit gross exposure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import ptopt.autograd as ag
from ptopt.autograd import ShapeError, Tensor
from ptopt.errors import DataError, NumericError
from ptopt.model import Dense, _uniform_init, register_model_kind, scores_to_weights

# ---------------------------------------------------------------------------
# mean-variance


@dataclass(frozen=True)
class MVConfig:
    """Trailing-window moment estimation for the mean-variance rule.

    ``ridge`` is added to the covariance diagonal before inversion; zero is
    allowed for exact-algebra tests but leaves singular covariances fatal.
    """

    lookback: int = 50
    ridge: float = 1e-6

    def __post_init__(self):
        if self.lookback < 2:
            raise ValueError(f"lookback must be >= 2, got {self.lookback}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")


def equal_weights(n_assets: int) -> np.ndarray:
    return np.full(n_assets, 1.0 / n_assets)


def tangency_weights(mu: np.ndarray, sigma: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Max-Sharpe direction inv(sigma + ridge*I) @ mu, L1-normalized.

    A zero direction (for example mu = 0) falls back to equal weights.
    """
    mu = np.asarray(mu, dtype=np.float64)
    n = mu.shape[0]
    loaded = np.asarray(sigma, dtype=np.float64) + ridge * np.eye(n)
    try:
        raw = np.linalg.solve(loaded, mu)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance not invertible: {exc}") from exc
    gross = np.abs(raw).sum()
    if gross == 0.0:
        return equal_weights(n)
    return raw / gross


def mv_weights(history: np.ndarray, cfg: MVConfig) -> np.ndarray:
    """Tangency weights from the trailing ``lookback`` rows of returns."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] < cfg.lookback:
        raise DataError(f"need at least {cfg.lookback} return rows, got shape {history.shape}")
    window = history[-cfg.lookback :]
    mu = window.mean(axis=0)
    sigma = np.cov(window, rowvar=False, ddof=1)
    return tangency_weights(mu, np.atleast_2d(sigma), cfg.ridge)


# ---------------------------------------------------------------------------
# MLP


@dataclass(frozen=True)
class MLPConfig:
    n_assets: int
    window: int
    hidden: tuple[int, ...] = (32,)
    seed: int = 0

    def __post_init__(self):
        if self.n_assets < 2 or self.window < 2:
            raise ValueError("need n_assets >= 2 and window >= 2")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"bad hidden sizes {self.hidden}")


class MLPModel:
    """Dense stack over the flattened trailing window, one weight row out."""

    kind = "mlp"

    def __init__(self, config: MLPConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        widths = [config.window * config.n_assets, *config.hidden, config.n_assets]
        self.layers = [Dense(a, b, rng) for a, b in zip(widths, widths[1:])]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, t in layer.parameters().items():
                out[f"layer{i}.{name}"] = t
        return out

    def _scores(self, x: np.ndarray) -> Tensor:
        h = Tensor(np.asarray(x, dtype=np.float64).reshape(1, -1))
        for layer in self.layers[:-1]:
            h = ag.elu(layer(h))
        return self.layers[-1](h)

    def window_weights(self, block: np.ndarray, rng=None) -> Tensor:
        """One weight row per decoder position of a 2*window training block."""
        tau = self.config.window
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (2 * tau, self.config.n_assets):
            raise ShapeError(f"block shape {block.shape} != {(2 * tau, self.config.n_assets)}")
        rows = [self._scores(block[j + 1 : tau + j + 1]) for j in range(tau)]
        return scores_to_weights(ag.concat(rows, axis=0))

    def day_weights(self, block: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.window_weights(block).data[-1].copy()


def mlp_forward(x: np.ndarray, model: MLPModel) -> Tensor:
    """Allocation for one trailing window, shape (n_assets,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.config.window, model.config.n_assets):
        raise ShapeError(f"window shape {x.shape} != {(model.config.window, model.config.n_assets)}")
    w = scores_to_weights(model._scores(x))
    return ag.reshape(w, (model.config.n_assets,))


# ---------------------------------------------------------------------------
# LSTM


@dataclass(frozen=True)
class LSTMConfig:
    n_assets: int
    window: int
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_assets < 2 or self.window < 2:
            raise ValueError("need n_assets >= 2 and window >= 2")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")


class LSTMModel:
    """Single-layer LSTM over the window with per-step allocation scores.

    Gate order in the packed projections is input, forget, candidate,
    output.
    """

    kind = "lstm"

    def __init__(self, config: LSTMConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        n, h = config.n_assets, config.hidden
        self.wx = _uniform_init(rng, n, (n, 4 * h))
        self.wh = _uniform_init(rng, h, (h, 4 * h))
        self.b = Tensor(np.zeros(4 * h), requires_grad=True)
        self.head = Dense(h, n, rng)

    def parameters(self) -> dict[str, Tensor]:
        out = {"wx": self.wx, "wh": self.wh, "b": self.b}
        out.update({f"head.{k}": v for k, v in self.head.parameters().items()})
        return out

    def window_weights(self, block: np.ndarray, rng=None) -> Tensor:
        tau = self.config.window
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (2 * tau, self.config.n_assets):
            raise ShapeError(f"block shape {block.shape} != {(2 * tau, self.config.n_assets)}")
        return lstm_forward(block[tau:], self)

    def day_weights(self, block: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.window_weights(block).data[-1].copy()


def lstm_forward(x: np.ndarray, model: LSTMModel) -> Tensor:
    """Run the recurrence over a window; weight row t uses rows 0..t only."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.n_assets:
        raise ShapeError(f"window shape {x.shape} does not match n_assets={model.config.n_assets}")
    h_size = model.config.hidden
    h = Tensor(np.zeros((1, h_size)))
    c = Tensor(np.zeros((1, h_size)))
    scores = []
    for t in range(x.shape[0]):
        z = ag.add(ag.add(ag.matmul(Tensor(x[t : t + 1]), model.wx), ag.matmul(h, model.wh)), model.b)
        gate_in = ag.sigmoid(ag.slice_(z, 1, 0, h_size))
        gate_forget = ag.sigmoid(ag.slice_(z, 1, h_size, 2 * h_size))
        candidate = ag.tanh(ag.slice_(z, 1, 2 * h_size, 3 * h_size))
        gate_out = ag.sigmoid(ag.slice_(z, 1, 3 * h_size, 4 * h_size))
        c = ag.add(ag.mul(gate_forget, c), ag.mul(gate_in, candidate))
        h = ag.mul(gate_out, ag.tanh(c))
        scores.append(model.head(h))
    return scores_to_weights(ag.concat(scores, axis=0))


register_model_kind("mlp", lambda cfg: MLPModel(MLPConfig(**{**cfg, "hidden": tuple(cfg["hidden"])})))
register_model_kind("lstm", lambda cfg: LSTMModel(LSTMConfig(**cfg)))
