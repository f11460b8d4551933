"""Queue-size ablation with tau fixed per similarity.

    python3 scripts/run_queue_ablation.py --out runs/queue
    python3 scripts/run_queue_ablation.py --tau-from runs/temperature/results.csv --out runs/queue

Without --tau-from the temperatures in the sweep file are used.
"""

import argparse
from pathlib import Path

from _table import print_rows
from supcon_lab import runner

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "sweep_queue.json")
    ap.add_argument("--out", default="runs/queue")
    ap.add_argument("--tau-from", help="results.csv of a temperature sweep")
    ap.add_argument("--start-epoch", type=int, help="override the queue start epoch")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int)
    args = ap.parse_args()

    spec = runner.load_sweep(args.config)
    if args.tau_from:
        spec.best_temperature = runner.best_temperatures(args.tau_from)
    if args.start_epoch is not None:
        spec.base = spec.base.replace(queue=type(spec.base.queue)(args.start_epoch, spec.base.queue.capacity))
    if args.jobs is not None:
        spec.jobs = args.jobs
    rows = runner.run_sweep(spec, args.out, seed=args.seed)
    print_rows(rows, ["similarity", "tau", "queue_capacity"])


if __name__ == "__main__":
    main()
