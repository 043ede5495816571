"""Optimization and the walk-forward protocol.

Training maximizes the cost-adjusted Sharpe of overlapping return windows
with Adam and early stopping on a chronological validation holdout (the
final slice of each training segment; a random holdout would leak future
rows into training). Hyperparameters come from uniform random sampling of a
small grid's cross-product. The walk-forward loop retrains once per test
year on all history to date and emits one allocation per test day.

Every source of randomness is a seeded generator: batch shuffles derive
from the train seed plus the epoch index, trial models from the master
seed plus the trial index, so identical inputs reproduce identical runs.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

import ptopt.autograd as ag
from ptopt.autograd import Tensor
from ptopt.benchmarks import LSTMConfig, LSTMModel, MLPConfig, MLPModel, MVConfig, equal_weights, mv_weights
from ptopt.data import ReturnTable, Split, WalkForwardSchedule
from ptopt.errors import DataError, TrainingError
from ptopt.metrics import WeightStream
from ptopt.model import PTConfig, PortfolioTransformer
from ptopt.objective import CostModel, ReturnsWindow, sharpe_loss

STRATEGIES = ("pt", "lstm", "mlp", "mv", "equal_weight")
TRAINED_STRATEGIES = ("pt", "lstm", "mlp")


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**t)
            v_hat = self.v[name] / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    validation_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError(f"validation_fraction must be in (0, 0.5), got {self.validation_fraction}")


@dataclass
class TrainWindow:
    """One training sample: an input block and the returns its weights earn.

    ``block`` holds 2*tau consecutive return rows ending at the decision
    row; ``realized`` holds the tau rows shifted one day forward of the
    weight rows the model emits for the newer half of the block.
    """

    block: np.ndarray
    realized: np.ndarray
    decision_index: int


def build_windows(table: ReturnTable, tau: int, lo: int, hi: int) -> list[TrainWindow]:
    """All daily-stride windows whose realized rows lie inside rows [lo, hi)."""
    r = table.returns
    out = []
    first = max(2 * tau - 1, lo + tau - 2)
    for d in range(first, min(hi - 2, r.shape[0] - 2) + 1):
        block = r[d - 2 * tau + 1 : d + 1]
        realized = r[d - tau + 2 : d + 2]
        out.append(TrainWindow(block=block, realized=realized, decision_index=d))
    return out


def make_batches(windows: list, batch_size: int, seed: int) -> list[list]:
    if not windows:
        raise TrainingError("cannot batch an empty window list")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(windows))
    shuffled = [windows[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class FitResult:
    history: list[EpochStats]
    best_epoch: int
    best_val: float


def _mean_window_loss(model, windows, costs: CostModel, rng=None) -> Tensor:
    losses = [
        ag.reshape(sharpe_loss(model.window_weights(w.block, rng=rng), ReturnsWindow(w.realized), costs), (1,))
        for w in windows
    ]
    return ag.mean(ag.concat(losses, axis=0)) if len(losses) > 1 else ag.reshape(losses[0], ())


def evaluate_loss(model, windows, costs: CostModel) -> float:
    with ag.no_grad():
        return _mean_window_loss(model, windows, costs).item()


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.data = snap[name].copy()


def fit(model, train_windows: list, valid_windows: list, cfg: TrainConfig, costs: CostModel = CostModel()) -> FitResult:
    """Train with the Sharpe loss until patience on validation runs out.

    The model is left holding the parameters of its best validation epoch.
    """
    if not train_windows or not valid_windows:
        raise TrainingError("fit needs non-empty train and validation window lists")
    params = model.parameters()
    optimizer = Adam(params, cfg.learning_rate)
    drop_rng = np.random.default_rng(cfg.seed)

    history: list[EpochStats] = []
    best_val = np.inf
    best_epoch = -1
    best_params = _snapshot(params)
    since_best = 0

    for epoch in range(cfg.max_epochs):
        batches = make_batches(train_windows, cfg.batch_size, cfg.seed + epoch)
        seen = 0
        loss_sum = 0.0
        for b_idx, batch in enumerate(batches):
            for p in params.values():
                p.grad = None
            with ag.Tape() as tape:
                loss = _mean_window_loss(model, batch, costs, rng=drop_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(f"non-finite loss {value} in epoch {epoch}, batch {b_idx}")
                ag.backward(loss, tape)
            optimizer.step({name: p.grad for name, p in params.items() if p.grad is not None})
            loss_sum += value * len(batch)
            seen += len(batch)
        val_loss = evaluate_loss(model, valid_windows, costs)
        history.append(EpochStats(epoch=epoch, train_loss=loss_sum / seen, val_loss=val_loss))

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = _snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    _restore(params, best_params)
    return FitResult(history=history, best_epoch=best_epoch, best_val=best_val)


# ---------------------------------------------------------------------------
# hyperparameter search


@dataclass
class HyperparamSpace:
    """Candidate values per hyperparameter plus a sampling budget."""

    axes: dict[str, list]
    budget: int = 100

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if any(not values for values in self.axes.values()):
            raise ValueError("every axis needs at least one candidate")

    def combinations(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]

    @classmethod
    def from_json(cls, text: str) -> "HyperparamSpace":
        doc = json.loads(text)
        return cls(axes=doc["axes"], budget=int(doc.get("budget", 100)))


def default_space(strategy: str) -> HyperparamSpace:
    if strategy == "pt":
        return HyperparamSpace(
            axes={
                "d_model": [8, 16, 32],
                "n_heads": [2, 4],
                "t2v_k": [3, 5],
                "n_layers": [1, 2],
                "learning_rate": [1e-3, 3e-3, 1e-2],
                "batch_size": [16, 32],
                "dropout": [0.0, 0.1],
            }
        )
    if strategy == "lstm":
        return HyperparamSpace(
            axes={
                "hidden": [8, 16, 32],
                "learning_rate": [1e-3, 3e-3, 1e-2],
                "batch_size": [16, 32],
            }
        )
    if strategy == "mlp":
        return HyperparamSpace(
            axes={
                "hidden": [[32], [64], [32, 16]],
                "learning_rate": [1e-3, 3e-3, 1e-2],
                "batch_size": [16, 32],
            }
        )
    raise ValueError(f"no hyperparameter space for strategy {strategy!r}")


def build_model(strategy: str, n_assets: int, tau: int, combo: dict, seed: int):
    """Instantiate a trainable strategy model from sampled hyperparameters."""
    if strategy == "pt":
        return PortfolioTransformer(
            PTConfig(
                n_assets=n_assets,
                window=tau,
                d_model=int(combo.get("d_model", 16)),
                n_heads=int(combo.get("n_heads", 2)),
                t2v_k=int(combo.get("t2v_k", 3)),
                n_layers=int(combo.get("n_layers", 1)),
                attention_scale_mode=str(combo.get("attention_scale_mode", "d_model")),
                dropout=float(combo.get("dropout", 0.0)),
                seed=seed,
            )
        )
    if strategy == "lstm":
        return LSTMModel(LSTMConfig(n_assets=n_assets, window=tau, hidden=int(combo.get("hidden", 16)), seed=seed))
    if strategy == "mlp":
        hidden = combo.get("hidden", (32,))
        if isinstance(hidden, (int, np.integer)):
            hidden = (hidden,)
        return MLPModel(MLPConfig(n_assets=n_assets, window=tau, hidden=tuple(int(h) for h in hidden), seed=seed))
    raise ValueError(f"not a trainable strategy: {strategy!r}")


def _combo_is_valid(strategy: str, n_assets: int, tau: int, combo: dict) -> bool:
    try:
        build_model(strategy, n_assets, tau, combo, seed=0)
    except ValueError:
        return False
    return True


@dataclass
class Trial:
    index: int
    params: dict
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class SearchResult:
    best: dict
    trials: list[Trial]


def _run_trial(payload) -> Trial:
    index, combo, strategy, n_assets, tau, train_windows, valid_windows, base_cfg, costs, master_seed = payload
    trial_seed = master_seed + index
    cfg = replace(
        base_cfg,
        learning_rate=float(combo.get("learning_rate", base_cfg.learning_rate)),
        batch_size=int(combo.get("batch_size", base_cfg.batch_size)),
        seed=trial_seed,
    )
    model = build_model(strategy, n_assets, tau, combo, seed=trial_seed)
    start = time.perf_counter()
    try:
        result = fit(model, train_windows, valid_windows, cfg, costs)
        train_loss = result.history[result.best_epoch].train_loss
        val_loss = result.best_val
    except TrainingError:
        train_loss, val_loss = np.inf, np.inf
    return Trial(index=index, params=combo, train_loss=train_loss, val_loss=val_loss, seconds=time.perf_counter() - start)


def random_grid_search(
    space: HyperparamSpace,
    strategy: str,
    n_assets: int,
    tau: int,
    train_windows: list,
    valid_windows: list,
    base_cfg: TrainConfig,
    costs: CostModel = CostModel(),
    seed: int = 0,
    jobs: int = 1,
) -> SearchResult:
    """Sample the grid uniformly with replacement and pick the best trial.

    Ties on validation loss go to the earliest trial index.
    """
    combos = [c for c in space.combinations() if _combo_is_valid(strategy, n_assets, tau, c)]
    if not combos:
        raise ValueError("hyperparameter space contains no valid combination")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(combos), size=space.budget)
    payloads = [
        (i, combos[k], strategy, n_assets, tau, train_windows, valid_windows, base_cfg, costs, seed)
        for i, k in enumerate(picks)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_run_trial, payloads))
    else:
        trials = [_run_trial(p) for p in payloads]
    losses = [t.val_loss for t in trials]
    best = trials[int(np.argmin(losses))]
    return SearchResult(best=best.params, trials=trials)


def write_trials_csv(trials: list[Trial], path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "params", "train_loss", "val_loss", "seconds"])
        for t in trials:
            writer.writerow([t.index, json.dumps(t.params, sort_keys=True), repr(t.train_loss), repr(t.val_loss), repr(t.seconds)])


# ---------------------------------------------------------------------------
# walk-forward


@dataclass
class SplitOutcome:
    test_year: int
    params: dict
    trials: list[Trial]
    model: object | None
    history: list[EpochStats] = field(default_factory=list)


@dataclass
class WalkForwardResult:
    stream: WeightStream
    outcomes: list[SplitOutcome]


def _test_day_weights(model_fn, table: ReturnTable, split: Split) -> tuple[list, np.ndarray]:
    """One decision per test-year return row, dated the prior trading day."""
    dates, rows = [], []
    for p in range(split.train_end - 1, split.test_end - 1):
        dates.append(table.dates[p])
        rows.append(model_fn(p))
    return dates, np.vstack(rows)


def walk_forward(
    table: ReturnTable,
    schedule: WalkForwardSchedule,
    strategy: str,
    tau: int = 8,
    space: HyperparamSpace | None = None,
    base_cfg: TrainConfig = TrainConfig(),
    costs: CostModel = CostModel(),
    mv_cfg: MVConfig = MVConfig(),
    seed: int = 0,
    jobs: int = 1,
    search_each_split: bool = True,
    base_combo: dict | None = None,
) -> WalkForwardResult:
    """Retrain per test year on all prior data and emit daily allocations.

    For trained strategies each split runs (optionally) a fresh grid search
    scored on the chronological validation slice, then a final fit with the
    winning hyperparameters. Rule-based strategies skip straight to daily
    weight emission. Weight rows are dated the decision day and earn the
    following trading day's returns.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    n = table.n_assets
    all_dates: list = []
    all_weights: list[np.ndarray] = []
    outcomes: list[SplitOutcome] = []
    chosen: dict | None = None

    for split_idx, split in enumerate(schedule.splits):
        if strategy == "equal_weight":
            w = equal_weights(n)
            dates, rows = _test_day_weights(lambda p: w, table, split)
            outcomes.append(SplitOutcome(split.test_year, {}, [], None))
        elif strategy == "mv":
            if split.train_end < mv_cfg.lookback:
                raise DataError(f"need {mv_cfg.lookback} rows before {split.test_year} for the mean-variance window")
            dates, rows = _test_day_weights(lambda p: mv_weights(table.returns[: p + 1], mv_cfg), table, split)
            outcomes.append(SplitOutcome(split.test_year, {"lookback": mv_cfg.lookback, "ridge": mv_cfg.ridge}, [], None))
        else:
            train_windows = build_windows(table, tau, 0, split.val_start)
            valid_windows = build_windows(table, tau, split.val_start, split.train_end)
            if not train_windows or not valid_windows:
                raise DataError(f"training range before {split.test_year} too short for window length {tau}")
            trials: list[Trial] = []
            if space is not None and (search_each_split or chosen is None):
                search = random_grid_search(
                    space, strategy, n, tau, train_windows, valid_windows, base_cfg,
                    costs=costs, seed=seed + 104729 * split_idx, jobs=jobs,
                )
                chosen = search.best
                trials = search.trials
            combo = dict(base_combo or {})
            if chosen is not None:
                combo.update(chosen)
            final_seed = seed + split_idx
            cfg = replace(
                base_cfg,
                learning_rate=float(combo.get("learning_rate", base_cfg.learning_rate)),
                batch_size=int(combo.get("batch_size", base_cfg.batch_size)),
                seed=final_seed,
            )
            model = build_model(strategy, n, tau, combo, seed=final_seed)
            result = fit(model, train_windows, valid_windows, cfg, costs)
            dates, rows = _test_day_weights(lambda p: model.day_weights(table.returns[p - 2 * tau + 1 : p + 1]), table, split)
            outcomes.append(SplitOutcome(split.test_year, combo, trials, model, result.history))
        all_dates.extend(dates)
        all_weights.append(rows)

    return WalkForwardResult(stream=WeightStream(all_dates, np.vstack(all_weights)), outcomes=outcomes)
