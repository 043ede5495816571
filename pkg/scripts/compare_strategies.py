"""Generate a planted-momentum synthetic market and compare all strategies.

Runs the full walk-forward pipeline for every strategy against the same
splits and cost model, then prints the side-by-side table. Artifacts land
in --out for plotting.

    python3 scripts/compare_strategies.py --out /tmp/exp1 --budget 4
"""

import argparse
import sys
from pathlib import Path

from ptopt.cli import main as ptopt_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--assets", type=int, default=4)
    parser.add_argument("--days", type=int, default=2000)
    parser.add_argument("--momentum", type=float, default=0.6)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--first-test-year", type=int, default=2020)
    parser.add_argument("--window", type=int, default=8)
    parser.add_argument("--budget", type=int, default=0)
    parser.add_argument("--max-epochs", type=int, default=30)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prices = out / "prices.csv"
    code = ptopt_main(
        ["synth", "--assets", str(args.assets), "--days", str(args.days),
         "--seed", str(args.seed), "--momentum", str(args.momentum), "--out", str(prices)]
    )
    if code != 0:
        return code
    return ptopt_main(
        ["compare", "--strategies", "pt", "lstm", "mlp", "mv", "equal_weight",
         "--data", str(prices), "--out", str(out / "comparison"),
         "--first-test-year", str(args.first_test_year), "--window", str(args.window),
         "--seed", str(args.seed), "--budget", str(args.budget),
         "--max-epochs", str(args.max_epochs), "--jobs", str(args.jobs), "--force"]
    )


if __name__ == "__main__":
    sys.exit(main())
