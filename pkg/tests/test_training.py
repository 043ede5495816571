"""Optimizer, fitting loop, grid search, and walk-forward protocol tests."""

import csv
import json

import numpy as np
import pytest

import ptopt.autograd as ag
import ptopt.training as tr
from ptopt.autograd import Tensor
from ptopt.data import SynthConfig, clean_and_return, synth_generate, yearly_splits
from ptopt.errors import TrainingError
from ptopt.metrics import run_backtest
from ptopt.model import PTConfig, PortfolioTransformer, scores_to_weights
from ptopt.objective import CostModel


def make_table(n_days, n_assets=3, seed=5, momentum=0.0):
    prices = synth_generate(SynthConfig(n_assets=n_assets, n_days=n_days, seed=seed, momentum=momentum))
    return clean_and_return(prices)


# ---------------------------------------------------------------------------
# Adam


@pytest.mark.parametrize("g", [7.3, -0.2, 1e-4, -250.0])
def test_adam_first_step_moves_by_lr_times_sign(g):
    p = {"x": Tensor(np.array([1.5]), requires_grad=True)}
    opt = tr.Adam(p, lr=0.1)
    opt.step({"x": np.array([g])})
    # eps in the denominator shades the step slightly below lr for tiny g
    assert np.isclose(p["x"].data[0] - 1.5, -0.1 * np.sign(g), rtol=1e-3)


def test_adam_zero_gradient_leaves_parameter_unchanged():
    p = {"x": Tensor(np.array([2.0, -3.0]), requires_grad=True)}
    tr.Adam(p, lr=0.1).step({"x": np.zeros(2)})
    assert np.array_equal(p["x"].data, [2.0, -3.0])


def test_adam_matches_reference_update_and_converges_on_quadratic():
    # oracle: the same update rule in plain scalar arithmetic
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    x_ref, m, v = 1.0, 0.0, 0.0
    p = {"x": Tensor(np.array([1.0]), requires_grad=True)}
    opt = tr.Adam(p, lr=lr)
    for t in range(1, 201):
        g = 2.0 * x_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        opt.step({"x": np.array([2.0 * p["x"].data[0]])})
        assert np.isclose(p["x"].data[0], x_ref, atol=1e-12)
    assert abs(p["x"].data[0]) < 0.05


def test_adam_skips_parameters_without_gradients():
    p = {
        "a": Tensor(np.array([1.0]), requires_grad=True),
        "b": Tensor(np.array([4.0]), requires_grad=True),
    }
    tr.Adam(p, lr=0.1).step({"a": np.array([1.0])})
    assert p["b"].data[0] == 4.0


def test_adam_rejects_mismatched_gradient_shape():
    p = {"x": Tensor(np.zeros(3), requires_grad=True)}
    with pytest.raises(ValueError):
        tr.Adam(p, lr=0.1).step({"x": np.zeros(2)})


@pytest.mark.parametrize(
    "kwargs",
    [
        {"batch_size": 0},
        {"learning_rate": -0.1},
        {"max_epochs": 0},
        {"patience": 0},
        {"validation_fraction": 0.0},
        {"validation_fraction": 0.5},
        {"validation_fraction": -0.1},
    ],
)
def test_train_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        tr.TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# window building and batching


def test_build_windows_alignment():
    table = make_table(80)
    tau = 4
    windows = tr.build_windows(table, tau, 0, 50)
    r = table.returns
    assert windows[0].decision_index == 2 * tau - 1
    assert windows[-1].decision_index == 48
    for w in windows:
        d = w.decision_index
        assert np.array_equal(w.block, r[d - 2 * tau + 1 : d + 1])
        assert np.array_equal(w.realized, r[d - tau + 2 : d + 2])
        assert w.block.shape == (2 * tau, 3)
        assert w.realized.shape == (tau, 3)


def test_build_windows_daily_stride():
    table = make_table(60)
    idx = [w.decision_index for w in tr.build_windows(table, 4, 0, 40)]
    assert idx == list(range(idx[0], idx[0] + len(idx)))


def test_build_windows_respects_realized_range():
    table = make_table(80)
    tau = 5
    for w in tr.build_windows(table, tau, 30, 60):
        first_realized = w.decision_index - tau + 2
        last_realized = w.decision_index + 1
        assert first_realized >= 30
        assert last_realized <= 59


def test_build_windows_realized_is_one_day_ahead_of_block():
    # the block ends on the decision row, the earned rows end one row later
    table = make_table(60)
    w = tr.build_windows(table, 4, 0, 40)[0]
    assert np.array_equal(w.realized[-1], table.returns[w.decision_index + 1])
    assert np.array_equal(w.block[-1], table.returns[w.decision_index])


def test_make_batches_sizes_with_remainder():
    windows = list(range(10))
    sizes = [len(b) for b in tr.make_batches(windows, 4, seed=0)]
    assert sizes == [4, 4, 2]


def test_make_batches_is_a_partition():
    windows = list(range(23))
    batches = tr.make_batches(windows, 5, seed=3)
    flat = [x for b in batches for x in b]
    assert sorted(flat) == windows


def test_make_batches_same_seed_same_order():
    windows = list(range(12))
    a = tr.make_batches(windows, 4, seed=9)
    b = tr.make_batches(windows, 4, seed=9)
    assert a == b


def test_make_batches_seed_varies_order():
    windows = list(range(12))
    orders = {tuple(x for b in tr.make_batches(windows, 4, seed=s) for x in b) for s in range(5)}
    assert len(orders) >= 2


def test_make_batches_rejects_empty_list():
    with pytest.raises(TrainingError):
        tr.make_batches([], 4, seed=0)


# ---------------------------------------------------------------------------
# fit


class Steerable:
    """One-parameter model whose loss direction is planted in the block.

    Scores are [[k * theta, 0]] * 2 where k is block[0, 0], so the training
    data can be arranged to push theta up while validation data punishes it.
    """

    kind = "steerable"

    def __init__(self, theta=0.0):
        self.theta = Tensor(np.array([[theta]]), requires_grad=True)

    def parameters(self):
        return {"theta": self.theta}

    def window_weights(self, block, rng=None):
        k = float(block[0, 0])
        scaled = ag.scale(ag.reshape(self.theta, (1,)), k)
        row = ag.reshape(ag.concat([scaled, Tensor(np.zeros(1))], axis=0), (1, 2))
        return scores_to_weights(ag.concat([row, row], axis=0))


def steer_window(up, realized_first):
    block = np.array([[1.0 if up else -1.0, 0.0]])
    realized = np.array([[realized_first, 0.0], [realized_first, 0.0]])
    return tr.TrainWindow(block=block, realized=realized, decision_index=0)


def test_fit_patience_one_stops_after_two_epochs_and_restores():
    # training pushes theta up, validation strictly worsens as it rises
    train = [steer_window(True, 0.02)]
    valid = [steer_window(True, -0.02)]
    model = Steerable()
    cfg = tr.TrainConfig(batch_size=1, learning_rate=0.1, max_epochs=50, patience=1, seed=0)
    result = tr.fit(model, train, valid, cfg, CostModel(0.0))
    assert len(result.history) == 2
    assert result.best_epoch == 0
    assert result.history[1].val_loss > result.history[0].val_loss
    assert tr.evaluate_loss(model, valid, CostModel(0.0)) == result.history[0].val_loss


def test_fit_restored_loss_equals_best_observed():
    table = make_table(160, momentum=0.4)
    train = tr.build_windows(table, 4, 0, 100)
    valid = tr.build_windows(table, 4, 100, 140)
    model = tr.build_model("mlp", 3, 4, {"hidden": (6,)}, seed=2)
    result = tr.fit(model, train, valid, tr.TrainConfig(max_epochs=5, learning_rate=3e-3, seed=1))
    best = min(h.val_loss for h in result.history)
    assert result.best_val == best
    assert tr.evaluate_loss(model, valid, CostModel()) == best


def test_fit_train_loss_decreases_on_planted_signal():
    table = make_table(200, seed=3, momentum=0.5)
    train = tr.build_windows(table, 4, 0, 130)
    valid = tr.build_windows(table, 4, 130, 160)
    model = PortfolioTransformer(PTConfig(n_assets=3, window=4, d_model=8, n_heads=2, t2v_k=2, n_layers=1, seed=7))
    result = tr.fit(model, train, valid, tr.TrainConfig(batch_size=32, learning_rate=3e-3, max_epochs=4, seed=1))
    assert result.history[-1].train_loss < result.history[0].train_loss


def test_fit_identical_seeds_identical_history():
    table = make_table(140, seed=11)
    train = tr.build_windows(table, 4, 0, 90)
    valid = tr.build_windows(table, 4, 90, 120)
    histories = []
    for _ in range(2):
        model = tr.build_model("lstm", 3, 4, {"hidden": 5}, seed=4)
        result = tr.fit(model, train, valid, tr.TrainConfig(max_epochs=3, seed=6))
        histories.append([(h.epoch, h.train_loss, h.val_loss) for h in result.history])
    assert histories[0] == histories[1]


def test_fit_aborts_on_non_finite_loss_naming_batch():
    train = [steer_window(True, 0.02)]
    valid = [steer_window(True, 0.01)]
    model = Steerable(theta=np.nan)
    with pytest.raises(TrainingError, match=r"epoch 0, batch 0"):
        tr.fit(model, train, valid, tr.TrainConfig(batch_size=1, max_epochs=2))


def test_fit_rejects_empty_window_lists():
    model = Steerable()
    with pytest.raises(TrainingError):
        tr.fit(model, [], [steer_window(True, 0.01)], tr.TrainConfig())
    with pytest.raises(TrainingError):
        tr.fit(model, [steer_window(True, 0.01)], [], tr.TrainConfig())


# ---------------------------------------------------------------------------
# hyperparameter search


def test_space_combinations_cross_product():
    space = tr.HyperparamSpace(axes={"a": [1, 2], "b": [10, 20, 30]}, budget=5)
    combos = space.combinations()
    assert len(combos) == 6
    assert {"a": 2, "b": 30} in combos


def test_space_rejects_empty_axis_and_bad_budget():
    with pytest.raises(ValueError):
        tr.HyperparamSpace(axes={"a": []})
    with pytest.raises(ValueError):
        tr.HyperparamSpace(axes={"a": [1]}, budget=0)


def test_space_json_roundtrip():
    space = tr.HyperparamSpace.from_json('{"axes": {"hidden": [4, 8]}, "budget": 7}')
    assert space.axes == {"hidden": [4, 8]}
    assert space.budget == 7


def search_fixture(momentum=0.5):
    table = make_table(170, seed=3, momentum=momentum)
    train = tr.build_windows(table, 4, 0, 110)
    valid = tr.build_windows(table, 4, 110, 150)
    return train, valid


def test_search_budget_and_single_combo():
    train, valid = search_fixture()
    space = tr.HyperparamSpace(axes={"hidden": [4]}, budget=3)
    result = tr.random_grid_search(
        space, "lstm", 3, 4, train, valid, tr.TrainConfig(max_epochs=1), seed=0
    )
    assert len(result.trials) == 3
    assert all(t.params == {"hidden": 4} for t in result.trials)
    assert result.best == {"hidden": 4}


def test_search_zero_learning_rate_loses():
    train, valid = search_fixture()
    space = tr.HyperparamSpace(axes={"hidden": [4], "learning_rate": [0.0, 1e-2]}, budget=6)
    result = tr.random_grid_search(
        space, "mlp", 3, 4, train, valid, tr.TrainConfig(max_epochs=10), seed=1
    )
    sampled = {t.params["learning_rate"] for t in result.trials}
    assert sampled == {0.0, 1e-2}
    assert result.best["learning_rate"] == 1e-2
    frozen = min(t.val_loss for t in result.trials if t.params["learning_rate"] == 0.0)
    moving = min(t.val_loss for t in result.trials if t.params["learning_rate"] == 1e-2)
    assert moving < frozen


def test_search_filters_invalid_combinations():
    train, valid = search_fixture()
    space = tr.HyperparamSpace(
        axes={"d_model": [8], "n_heads": [3, 2], "t2v_k": [2], "n_layers": [1]}, budget=2
    )
    result = tr.random_grid_search(
        space, "pt", 3, 4, train, valid, tr.TrainConfig(max_epochs=1), seed=0
    )
    assert all(t.params["n_heads"] == 2 for t in result.trials)


def test_search_no_valid_combination_raises():
    train, valid = search_fixture()
    space = tr.HyperparamSpace(axes={"d_model": [8], "n_heads": [3], "t2v_k": [2], "n_layers": [1]})
    with pytest.raises(ValueError):
        tr.random_grid_search(space, "pt", 3, 4, train, valid, tr.TrainConfig(max_epochs=1))


def test_search_deterministic_across_runs():
    train, valid = search_fixture()
    space = tr.HyperparamSpace(axes={"hidden": [3, 5]}, budget=3)
    runs = [
        tr.random_grid_search(space, "lstm", 3, 4, train, valid, tr.TrainConfig(max_epochs=1), seed=2)
        for _ in range(2)
    ]
    a, b = ([(t.params["hidden"], t.train_loss, t.val_loss) for t in r.trials] for r in runs)
    assert a == b


def test_search_parallel_matches_serial():
    train, valid = search_fixture()
    space = tr.HyperparamSpace(axes={"hidden": [3, 5]}, budget=2)
    serial = tr.random_grid_search(space, "lstm", 3, 4, train, valid, tr.TrainConfig(max_epochs=1), seed=2, jobs=1)
    parallel = tr.random_grid_search(space, "lstm", 3, 4, train, valid, tr.TrainConfig(max_epochs=1), seed=2, jobs=2)
    assert [(t.params, t.train_loss, t.val_loss) for t in serial.trials] == [
        (t.params, t.train_loss, t.val_loss) for t in parallel.trials
    ]


def test_trials_csv_roundtrip(tmp_path):
    trials = [
        tr.Trial(index=0, params={"hidden": 4, "learning_rate": 1e-3}, train_loss=-0.25, val_loss=-0.125, seconds=1.5),
        tr.Trial(index=1, params={"hidden": 8, "learning_rate": 3e-3}, train_loss=-0.3, val_loss=np.inf, seconds=0.75),
    ]
    path = tmp_path / "trials.csv"
    tr.write_trials_csv(trials, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["trial", "params", "train_loss", "val_loss", "seconds"]
    assert json.loads(rows[1][1]) == {"hidden": 4, "learning_rate": 1e-3}
    assert float(rows[1][3]) == -0.125
    assert float(rows[2][3]) == np.inf


# ---------------------------------------------------------------------------
# walk-forward


def wf_table(n_days=790, seed=5, momentum=0.0):
    return make_table(n_days, seed=seed, momentum=momentum)


def test_walk_forward_equal_weight_dates_and_rows():
    table = wf_table()
    schedule = yearly_splits(table, 2016)
    split = schedule.splits[0]
    result = tr.walk_forward(table, schedule, "equal_weight")
    n_test = split.test_end - split.train_end
    assert len(result.stream.dates) == n_test
    assert result.stream.dates[0] == table.dates[split.train_end - 1]
    assert result.stream.dates[-1] == table.dates[split.test_end - 2]
    assert np.allclose(result.stream.weights, 1.0 / 3.0)


def test_walk_forward_curve_covers_exactly_the_test_rows():
    table = wf_table()
    schedule = yearly_splits(table, 2016)
    split = schedule.splits[0]
    result = tr.walk_forward(table, schedule, "mv")
    curve = run_backtest(result.stream, table, CostModel())
    assert list(curve.dates) == list(table.dates[split.train_end : split.test_end])
    assert all(d.year == 2016 for d in curve.dates)


def test_walk_forward_mv_ignores_future_rows():
    table = wf_table()
    altered = wf_table(seed=99)
    returns = table.returns.copy()
    cut = len(returns) - 60
    returns[cut:] = altered.returns[cut:]
    from ptopt.data import ReturnTable

    bent = ReturnTable(dates=table.dates, tickers=table.tickers, returns=returns)
    schedule = yearly_splits(table, 2016)
    a = tr.walk_forward(table, schedule, "mv").stream
    b = tr.walk_forward(bent, schedule, "mv").stream
    date_to_row = {d: i for i, d in enumerate(a.dates)}
    for d, i in date_to_row.items():
        decision_row = table.index_of(d)
        if decision_row < cut - 1:
            assert np.array_equal(a.weights[i], b.weights[i])


def test_walk_forward_trained_strategy_unit_gross():
    table = wf_table(n_days=560, seed=8)
    schedule = yearly_splits(table, 2015)
    result = tr.walk_forward(
        table, schedule, "mlp", tau=4, base_cfg=tr.TrainConfig(max_epochs=2, seed=0), seed=3
    )
    gross = np.abs(result.stream.weights).sum(axis=1)
    assert np.allclose(gross, 1.0, atol=1e-9)
    assert result.outcomes[0].params == {}
    assert len(result.outcomes[0].history) >= 1


def test_walk_forward_search_once_reuses_first_split_choice():
    table = wf_table(n_days=1050, seed=13)
    schedule = yearly_splits(table, 2016)
    assert len(schedule.splits) == 2
    space = tr.HyperparamSpace(axes={"hidden": [3, 5]}, budget=2)
    result = tr.walk_forward(
        table, schedule, "lstm", tau=4, space=space,
        base_cfg=tr.TrainConfig(max_epochs=1, seed=0), seed=1, search_each_split=False,
    )
    assert len(result.outcomes[0].trials) == 2
    assert result.outcomes[1].trials == []
    assert result.outcomes[1].params == result.outcomes[0].params


def test_walk_forward_deterministic():
    table = wf_table()
    schedule = yearly_splits(table, 2016)
    a = tr.walk_forward(table, schedule, "mv", seed=0).stream
    b = tr.walk_forward(table, schedule, "mv", seed=0).stream
    assert np.array_equal(a.weights, b.weights)
    assert a.dates == b.dates


def test_walk_forward_rejects_unknown_strategy():
    table = wf_table()
    schedule = yearly_splits(table, 2016)
    with pytest.raises(ValueError, match="equal_weight"):
        tr.walk_forward(table, schedule, "xgboost")
