"""Command-line driver: data synthesis, single-strategy runs, comparisons.

Three subcommands share one pipeline. ``synth`` writes a price CSV,
``run`` walks one strategy forward and drops its artifacts into a fresh
output directory, ``compare`` does the same for several strategies against
identical splits and cost model and renders a side-by-side table.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every ``run``/``compare`` writes a manifest.json recording the effective
config, seed, package version, and a checksum of the input file, so any
result can be traced back to exactly what produced it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ptopt import __version__
from ptopt.autograd import ContractError
from ptopt.data import SynthConfig, clean_and_return, load_csv, synth_generate, write_csv, yearly_splits
from ptopt.errors import DataError, NumericError
from ptopt.metrics import (
    TRADING_DAYS,
    MetricsReport,
    compute_metrics,
    run_backtest,
    write_equity_csv,
    write_rolling_sharpe_csv,
)
from ptopt.model import save_checkpoint
from ptopt.objective import CostModel
from ptopt.training import (
    STRATEGIES,
    TRAINED_STRATEGIES,
    HyperparamSpace,
    TrainConfig,
    default_space,
    walk_forward,
)

METRIC_COLUMNS = ("returns", "vol", "sharpe", "sortino", "mdd", "calmar", "pct_positive")
LOWER_IS_BETTER = {"vol", "mdd"}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str
    strategy: str
    out_dir: str
    seed: int = 0
    cost_rate: float = 0.0002
    first_test_year: int = 2016
    t2v_k: int = 3
    window: int = 8
    space_path: str | None = None
    budget: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.budget < 0:
            raise UsageError(f"budget must be >= 0, got {self.budget}")


def effective_seed(flag_seed: int) -> int:
    env = os.environ.get("PT_SEED")
    return int(env) if env else flag_seed


def version_string() -> str:
    """git-describe of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "-C", str(here), "describe", "--tags", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"v{__version__}"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def prepare_out_dir(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: dict, seed: int, data_path: str) -> None:
    doc = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "version": version_string(),
        "input_sha256": file_sha256(data_path),
    }
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _resolve_space(cfg: RunConfig, strategy: str) -> HyperparamSpace | None:
    if cfg.space_path is not None:
        space = HyperparamSpace.from_json(Path(cfg.space_path).read_text(encoding="utf-8"))
        if cfg.budget > 0:
            space.budget = cfg.budget
        return space
    if cfg.budget > 0 and strategy in TRAINED_STRATEGIES:
        space = default_space(strategy)
        space.budget = cfg.budget
        return space
    return None


def _write_all_trials(outcomes, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["test_year", "trial", "params", "train_loss", "val_loss", "seconds"])
        for outcome in outcomes:
            for t in outcome.trials:
                writer.writerow(
                    [outcome.test_year, t.index, json.dumps(t.params, sort_keys=True),
                     repr(t.train_loss), repr(t.val_loss), repr(t.seconds)]
                )


def _execute_strategy(table, schedule, strategy: str, cfg: RunConfig, seed: int, args):
    space = _resolve_space(cfg, strategy)
    base_combo = {"t2v_k": cfg.t2v_k} if strategy == "pt" else None
    base_cfg = TrainConfig(max_epochs=args.max_epochs, patience=args.patience, seed=seed)
    result = walk_forward(
        table, schedule, strategy,
        tau=cfg.window, space=space, base_cfg=base_cfg,
        costs=CostModel(cfg.cost_rate), seed=seed, jobs=args.jobs,
        search_each_split=not args.search_once, base_combo=base_combo,
    )
    curve = run_backtest(result.stream, table, CostModel(cfg.cost_rate))
    return result, curve, compute_metrics(curve)


def _write_run_artifacts(out: Path, result, curve, report: MetricsReport) -> None:
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    write_equity_csv(curve, out / "equity.csv")
    if len(curve.daily_returns) >= TRADING_DAYS:
        write_rolling_sharpe_csv(curve, out / "rolling_sharpe.csv")
    else:
        (out / "rolling_sharpe.csv").write_text("date,value\n", encoding="utf-8")
    _write_all_trials(result.outcomes, out / "trials.csv")
    for outcome in result.outcomes:
        if outcome.model is not None:
            save_checkpoint(outcome.model, out / f"checkpoint_{outcome.test_year}.ckpt")


def render_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table, one strategy per row, best value per column starred."""
    values = {name: asdict(report) for name, report in rows}
    best: dict[str, float] = {}
    for col in METRIC_COLUMNS:
        series = [values[name][col] for name, _ in rows]
        best[col] = min(series) if col in LOWER_IS_BETTER else max(series)
    cells = [["strategy", *METRIC_COLUMNS]]
    for name, _ in rows:
        row = [name]
        for col in METRIC_COLUMNS:
            v = values[name][col]
            row.append(f"{v:.4f}" + ("*" if v == best[col] else ""))
        cells.append(row)
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    lines = []
    for r in cells:
        lines.append("  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(
            n_assets=args.assets, n_days=args.days, seed=effective_seed(args.seed), momentum=args.momentum
        )
    except ValueError as err:
        raise UsageError(str(err)) from err
    write_csv(synth_generate(cfg), args.out)
    print(f"wrote {args.days} rows x {args.assets} assets to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _run_config(args)
    seed = effective_seed(cfg.seed)
    out = prepare_out_dir(cfg.out_dir, args.force)
    table = clean_and_return(load_csv(cfg.data))
    schedule = yearly_splits(table, cfg.first_test_year)
    result, curve, report = _execute_strategy(table, schedule, cfg.strategy, cfg, seed, args)
    _write_run_artifacts(out, result, curve, report)
    write_manifest(out, "run", asdict(cfg), seed, cfg.data)
    print(f"{cfg.strategy}: sharpe {report.sharpe:.4f} over {len(curve.dates)} test days -> {out}")
    return 0


def cmd_compare(args) -> int:
    if len(args.strategies) < 2:
        raise UsageError("compare needs at least 2 strategies")
    if len(set(args.strategies)) != len(args.strategies):
        raise UsageError("duplicate strategy in compare list")
    cfg = _run_config(args, strategy=args.strategies[0])
    seed = effective_seed(cfg.seed)
    out = prepare_out_dir(cfg.out_dir, args.force)
    table = clean_and_return(load_csv(cfg.data))
    schedule = yearly_splits(table, cfg.first_test_year)

    rows: list[tuple[str, MetricsReport]] = []
    curves = {}
    for strategy in args.strategies:
        result, curve, report = _execute_strategy(table, schedule, strategy, cfg, seed, args)
        rows.append((strategy, report))
        curves[strategy] = curve

    with open(out / "comparison.csv", "w", encoding="utf-8") as fh:
        fh.write("strategy," + ",".join(METRIC_COLUMNS) + "\n")
        for name, report in rows:
            values = asdict(report)
            fh.write(name + "," + ",".join(repr(values[c]) for c in METRIC_COLUMNS) + "\n")

    table_text = render_table(rows)
    (out / "comparison.txt").write_text(table_text, encoding="utf-8")

    dates = curves[args.strategies[0]].dates
    with open(out / "equity_curves.csv", "w", encoding="utf-8") as fh:
        fh.write("date," + ",".join(args.strategies) + "\n")
        stacked = [curves[s].cumulative for s in args.strategies]
        for i, d in enumerate(dates):
            fh.write(d.isoformat() + "," + ",".join(repr(float(c[i])) for c in stacked) + "\n")

    write_manifest(out, "compare", {**asdict(cfg), "strategies": args.strategies}, seed, cfg.data)
    print(table_text, end="")
    return 0


def _run_config(args, strategy: str | None = None) -> RunConfig:
    return RunConfig(
        data=args.data,
        strategy=strategy if strategy is not None else args.strategy,
        out_dir=args.out,
        seed=args.seed,
        cost_rate=args.cost_rate,
        first_test_year=args.first_test_year,
        t2v_k=args.t2v_k,
        window=args.window,
        space_path=args.space,
        budget=args.budget,
    )


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # usage problems must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_shared_run_flags(p) -> None:
    p.add_argument("--data", required=True, help="input price CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cost-rate", type=float, default=0.0002, help="cost per unit turnover")
    p.add_argument("--first-test-year", type=int, default=2016)
    p.add_argument("--t2v-k", type=int, default=3, help="periodic embedding components")
    p.add_argument("--window", type=int, default=8, help="decision window length")
    p.add_argument("--space", default=None, help="hyperparameter space JSON file")
    p.add_argument("--budget", type=int, default=0, help="grid-search trials per split (0 = no search)")
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1, help="parallel grid-search trials")
    p.add_argument("--search-once", action="store_true", help="reuse the first split's search result")
    p.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic price CSV")
    p_synth.add_argument("--assets", type=int, required=True)
    p_synth.add_argument("--days", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--momentum", type=float, default=0.0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="walk one strategy forward and write artifacts")
    p_run.add_argument("--strategy", required=True, choices=STRATEGIES)
    _add_shared_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several strategies through the identical pipeline")
    p_cmp.add_argument("--strategies", nargs="+", required=True, choices=STRATEGIES)
    _add_shared_run_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except (NumericError, ContractError, np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
