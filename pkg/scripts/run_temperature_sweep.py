"""Similarity x temperature grid (eight SupCon runs, plus the BCE baseline with --baseline).

    python3 scripts/run_temperature_sweep.py --out runs/temperature
    python3 scripts/run_temperature_sweep.py --config configs/sweep_table.json --out runs/table

Prints the per-benchmark EERs and the best temperature per similarity,
which run_queue_ablation.py can pick up through --tau-from.
"""

import argparse
from pathlib import Path

from _table import print_rows
from supcon_lab import runner

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "sweep_temperature.json")
    ap.add_argument("--out", default="runs/temperature")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int)
    ap.add_argument("--baseline", action="store_true", help="add the end-to-end BCE baseline")
    args = ap.parse_args()

    spec = runner.load_sweep(args.config)
    if args.jobs is not None:
        spec.jobs = args.jobs
    spec.include_baseline = spec.include_baseline or args.baseline
    rows = runner.run_sweep(spec, args.out, seed=args.seed)
    print_rows(rows, ["similarity", "tau"])
    best = runner.best_temperatures(Path(args.out) / "results.csv")
    print("best no-queue temperature:", ", ".join(f"{k} {v:g}" for k, v in sorted(best.items())))


if __name__ == "__main__":
    main()
